//! Versioned parameter files.
//!
//! Layout: one line of JSON header terminated by `\n`, followed by the
//! payload as little-endian `f64` values. Tabular payload: emission logits for
//! `V_1..V_{m-1}` (row-major), then child logits per nonterminal in child-set
//! order. Trilinear payload: `h`, `W_o`, `W_q`, `W_l`, `W_r`, each row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::support_tree::SupportTreeConfig;

use super::{Grammar, GrammarPolicy, Scorer, ScorerKind, TabularScorer, TrilinearScorer};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub format_version: u32,
    pub src_len: usize,
    pub upsample: usize,
    pub depth: u32,
    pub vocab_size: usize,
    pub policy: GrammarPolicy,
    pub scorer_kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    /// Unary share per nonterminal.
    pub rho: Vec<f64>,
}

impl ParamHeader {
    pub fn grammar(&self) -> Result<Grammar> {
        Grammar::from_config(
            SupportTreeConfig::new(self.src_len, self.upsample, self.depth)?,
            self.vocab_size,
            self.policy,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub header: ParamHeader,
    pub scorer: Scorer,
}

impl ParamFile {
    pub fn new(grammar: &Grammar, scorer: Scorer) -> Self {
        let config = grammar.tree().config();
        Self {
            header: ParamHeader {
                format_version: FORMAT_VERSION,
                src_len: config.src_len,
                upsample: config.upsample,
                depth: config.depth,
                vocab_size: grammar.vocab_size(),
                policy: grammar.policy(),
                scorer_kind: scorer.kind(),
                hidden_dim: scorer.hidden(),
                rho: scorer.split().to_vec(),
            },
            scorer,
        }
    }

    /// Rebuilds the grammar described by the header.
    pub fn grammar(&self) -> Result<Grammar> {
        self.header.grammar()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out =
            serde_json::to_vec(&self.header).map_err(|e| Error::ParamFormat(e.to_string()))?;
        out.push(b'\n');
        let payload: Vec<f64> = match &self.scorer {
            Scorer::Tabular(s) => s
                .emit_logits()
                .iter()
                .chain(s.child_logits())
                .flatten()
                .copied()
                .collect(),
            Scorer::Trilinear(s) => [&s.h, &s.w_o, &s.w_q, &s.w_l, &s.w_r]
                .into_iter()
                .flatten()
                .copied()
                .collect(),
        };
        out.reserve(payload.len() * 8);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::ParamFormat("missing header line".into()))?;
        let header: ParamHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::ParamFormat(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::ParamFormat(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let body = &bytes[newline + 1..];
        if !body.len().is_multiple_of(8) {
            return Err(Error::ParamFormat(
                "payload is not a whole number of f64 values".into(),
            ));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));

        let grammar = header.grammar()?;
        let m = grammar.node_count();
        let v = grammar.vocab_size();
        let expected = match header.scorer_kind {
            ScorerKind::Tabular => (m - 1) * v + grammar.rule_space_size(),
            ScorerKind::Trilinear => {
                let hd = header.hidden_dim.ok_or_else(|| {
                    Error::ParamFormat("trilinear file without hidden_dim".into())
                })?;
                m * hd + v * hd + 3 * hd * hd
            }
        };
        if body.len() / 8 != expected {
            return Err(Error::ParamFormat(format!(
                "payload holds {} values, expected {expected}",
                body.len() / 8
            )));
        }
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let scorer = match header.scorer_kind {
            ScorerKind::Tabular => {
                let emit = (0..m)
                    .map(|i| if i == 0 { Vec::new() } else { take(v) })
                    .collect();
                let child = (0..m).map(|i| take(grammar.child_set(i).len())).collect();
                Scorer::Tabular(TabularScorer::new(
                    &grammar,
                    emit,
                    child,
                    header.rho.clone(),
                )?)
            }
            ScorerKind::Trilinear => {
                let hd = header.hidden_dim.expect("checked above");
                let h = take(m * hd);
                let w_o = take(v * hd);
                let w_q = take(hd * hd);
                let w_l = take(hd * hd);
                let w_r = take(hd * hd);
                Scorer::Trilinear(TrilinearScorer::new(
                    &grammar,
                    hd,
                    h,
                    w_o,
                    w_q,
                    w_l,
                    w_r,
                    header.rho.clone(),
                )?)
            }
        };
        Ok(Self { header, scorer })
    }
}

/// Writes the file through a sibling temporary and a rename.
pub fn save_params(path: impl AsRef<Path>, file: &ParamFile) -> Result<()> {
    crate::corpus::write_atomic(path, &file.to_bytes()?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamFile> {
    ParamFile::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Emission;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grammar() -> Grammar {
        Grammar::from_config(
            SupportTreeConfig::new(2, 2, 1).unwrap(),
            5,
            GrammarPolicy {
                closure: true,
                emission: Emission::AllNodes,
            },
        )
        .unwrap()
    }

    #[test]
    fn both_scorers_round_trip_bit_exactly() {
        let g = grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tab = TabularScorer::random(&g, &mut rng, 3.0);
        tab = TabularScorer::new(
            &g,
            tab.emit_logits().to_vec(),
            tab.child_logits().to_vec(),
            (0..g.node_count())
                .map(|i| (i as f64 * 0.137).fract())
                .collect(),
        )
        .unwrap();
        for scorer in [
            Scorer::Tabular(tab),
            Scorer::Trilinear(TrilinearScorer::random(&g, 3, &mut rng, 1.0).unwrap()),
        ] {
            let file = ParamFile::new(&g, scorer);
            let bytes = file.to_bytes().unwrap();
            let back = ParamFile::from_bytes(&bytes).unwrap();
            assert_eq!(back, file);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            assert_eq!(back.grammar().unwrap().node_count(), g.node_count());
        }
    }

    #[test]
    fn header_is_json_line() {
        let g = grammar();
        let file = ParamFile::new(&g, Scorer::Tabular(TabularScorer::uniform(&g)));
        let bytes = file.to_bytes().unwrap();
        let line =
            std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).unwrap();
        assert!(line.starts_with("{\"format_version\":1,\"src_len\":2,\"upsample\":2,\"depth\":1,"));
        assert!(!line.contains("hidden_dim"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let g = grammar();
        let file = ParamFile::new(&g, Scorer::Tabular(TabularScorer::uniform(&g)));
        let mut bytes = file.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            ParamFile::from_bytes(&bytes),
            Err(Error::ParamFormat(_))
        ));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            ParamFile::from_bytes(&bytes),
            Err(Error::ParamFormat(_))
        ));
        assert!(ParamFile::from_bytes(b"no newline").is_err());
    }
}

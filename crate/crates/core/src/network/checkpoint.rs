//! Self-describing text checkpoints.
//!
//! One record per line: a key, its shape, then flat values with 17
//! significant digits, e.g. `weight 0 64 1 <64 values>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::Mlp;
use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};
use crate::training::AdamState;

const MAGIC: &str = "swing-pinn-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// Total loss at the saved parameters.
    pub loss: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    /// Trainable physical parameters (inverse mode), in `[m_g, d_g]` order
    /// restricted to the unknowns.
    pub physical: Vec<f64>,
    pub adam: Option<AdamState>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn expect_architecture(&self, layer_sizes: &[usize]) -> Result<()> {
        if self.mlp.layer_sizes() != layer_sizes {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint architecture {:?} does not match expected {:?}",
                self.mlp.layer_sizes(),
                layer_sizes
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("checkpoint text is ASCII")
    }

    fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let join = |vals: &mut dyn Iterator<Item = f64>| {
            vals.map(|v| format!(" {}", fmt_f64(v))).collect::<String>()
        };
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "config_digest {}", self.meta.config_digest)?;
        writeln!(out, "epoch {}", self.meta.epoch)?;
        writeln!(out, "loss {}", fmt_f64(self.meta.loss))?;
        writeln!(out, "seed {}", self.mlp.seed())?;
        let sizes: Vec<String> = self.mlp.layer_sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "layer_sizes {}", sizes.join(" "))?;
        for (l, (w, b)) in self.mlp.weights.iter().zip(&self.mlp.biases).enumerate() {
            writeln!(
                out,
                "weight {l} {} {}{}",
                w.nrows(),
                w.ncols(),
                join(&mut w.iter().copied())
            )?;
            writeln!(out, "bias {l} {}{}", b.len(), join(&mut b.iter().copied()))?;
        }
        writeln!(
            out,
            "physical {}{}",
            self.physical.len(),
            join(&mut self.physical.iter().copied())
        )?;
        if let Some(adam) = &self.adam {
            writeln!(out, "adam_step {}", adam.step)?;
            writeln!(
                out,
                "adam_first {}{}",
                adam.len(),
                join(&mut adam.first_moment.iter().copied())
            )?;
            writeln!(
                out,
                "adam_second {}{}",
                adam.len(),
                join(&mut adam.second_moment.iter().copied())
            )?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("header", "missing checkpoint magic line"));
        }
        let mut digest = None;
        let mut epoch = None;
        let mut loss = None;
        let mut seed = None;
        let mut sizes: Option<Vec<usize>> = None;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut physical = None;
        let mut adam_step = None;
        let mut adam_first = None;
        let mut adam_second = None;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut tok = line.split_ascii_whitespace();
            let key = tok.next().unwrap_or_default();
            match key {
                "config_digest" => digest = Some(tok.next().unwrap_or_default().to_string()),
                "epoch" => epoch = Some(parse_int::<usize>(key, tok.next())?),
                "loss" => loss = Some(parse_f64(key, tok.next())?),
                "seed" => seed = Some(parse_int::<u64>(key, tok.next())?),
                "layer_sizes" => {
                    sizes = Some(
                        tok.map(|t| parse_int::<usize>(key, Some(t)))
                            .collect::<Result<_>>()?,
                    )
                }
                "weight" => {
                    let l = parse_int::<usize>(key, tok.next())?;
                    let rows = parse_int::<usize>(key, tok.next())?;
                    let cols = parse_int::<usize>(key, tok.next())?;
                    let field = format!("weight {l}");
                    let vals = parse_values(&field, tok, rows * cols)?;
                    if l != weights.len() {
                        return Err(corrupt(&field, "layers out of order"));
                    }
                    weights.push(
                        Array2::from_shape_vec((rows, cols), vals)
                            .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
                    );
                }
                "bias" => {
                    let l = parse_int::<usize>(key, tok.next())?;
                    let len = parse_int::<usize>(key, tok.next())?;
                    let field = format!("bias {l}");
                    let vals = parse_values(&field, tok, len)?;
                    if l != biases.len() {
                        return Err(corrupt(&field, "layers out of order"));
                    }
                    biases.push(Array1::from_vec(vals));
                }
                "physical" => {
                    let len = parse_int::<usize>(key, tok.next())?;
                    physical = Some(parse_values(key, tok, len)?);
                }
                "adam_step" => adam_step = Some(parse_int::<u64>(key, tok.next())?),
                "adam_first" => {
                    let len = parse_int::<usize>(key, tok.next())?;
                    adam_first = Some(parse_values(key, tok, len)?);
                }
                "adam_second" => {
                    let len = parse_int::<usize>(key, tok.next())?;
                    adam_second = Some(parse_values(key, tok, len)?);
                }
                other => return Err(corrupt(other, "unknown record")),
            }
        }
        let sizes = sizes.ok_or_else(|| corrupt("layer_sizes", "missing"))?;
        let mlp = Mlp::from_parts(weights, biases, seed.ok_or_else(|| corrupt("seed", "missing"))?)?;
        if mlp.layer_sizes() != sizes.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "declared layer sizes {sizes:?} but parameters imply {:?}",
                mlp.layer_sizes()
            )));
        }
        let physical = physical.unwrap_or_default();
        let adam = match (adam_step, adam_first, adam_second) {
            (None, None, None) => None,
            (Some(step), Some(first), Some(second)) => {
                let expected = mlp.param_count() + physical.len();
                if first.len() != expected || second.len() != expected {
                    return Err(Error::ShapeMismatch(format!(
                        "optimizer state has {} entries, expected {expected}",
                        first.len()
                    )));
                }
                Some(AdamState {
                    first_moment: first,
                    second_moment: second,
                    step,
                })
            }
            _ => return Err(corrupt("adam", "incomplete optimizer state")),
        };
        Ok(Checkpoint {
            mlp,
            physical,
            adam,
            meta: CheckpointMeta {
                epoch: epoch.ok_or_else(|| corrupt("epoch", "missing"))?,
                loss: loss.ok_or_else(|| corrupt("loss", "missing"))?,
                config_digest: digest.ok_or_else(|| corrupt("config_digest", "missing"))?,
            },
        })
    }
}

fn corrupt(field: &str, reason: &str) -> Error {
    Error::CorruptCheckpoint {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_int<T: std::str::FromStr>(field: &str, tok: Option<&str>) -> Result<T> {
    let tok = tok.ok_or_else(|| corrupt(field, "missing value"))?;
    tok.parse()
        .map_err(|_| corrupt(field, &format!("invalid integer `{tok}`")))
}

fn parse_f64(field: &str, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| corrupt(field, "missing value"))?;
    tok.parse()
        .map_err(|_| corrupt(field, &format!("invalid number `{tok}`")))
}

fn parse_values<'a>(
    field: &str,
    tok: impl Iterator<Item = &'a str>,
    expected: usize,
) -> Result<Vec<f64>> {
    let vals: Vec<f64> = tok
        .map(|t| parse_f64(field, Some(t)))
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "`{field}` declares {expected} values but holds {}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CheckpointMissing(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    Checkpoint::parse(&text)
}

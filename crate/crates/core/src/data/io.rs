//! Dataset directories: a text `manifest` plus raw byte files `panels`
//! (`N×n×80×80`), `targets` (`N`) and `rules` (`N×d_r`).

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::grammar::{Rule, RuleSpec, RULE_DIM};
use super::render::{PANEL_BYTES, PANEL_SIZE};
use super::sample::{render_into, sample_symbolic, RegimeSpec, Split};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::manifest::Manifest;

pub const DATASET_VERSION: u32 = 1;
const KIND: &str = "pong-dataset";

/// A split held in memory as the raw bytes of its files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub regime: RegimeSpec,
    pub split: Split,
    pub seed: u64,
    pub rule_dim: usize,
    pub panels: Vec<u8>,
    pub targets: Vec<u8>,
    pub rules: Vec<u8>,
}

impl Dataset {
    pub fn geometry(&self) -> Geometry {
        self.regime.geometry
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Bytes of one instance's panels.
    pub fn instance_bytes(&self) -> usize {
        self.geometry().n_panels() * PANEL_BYTES
    }

    pub fn instance_panels(&self, i: usize) -> &[u8] {
        let n = self.instance_bytes();
        &self.panels[i * n..(i + 1) * n]
    }

    pub fn instance_rules(&self, i: usize) -> &[u8] {
        &self.rules[i * self.rule_dim..(i + 1) * self.rule_dim]
    }

    /// Renders instances `0..count` of `split` in parallel.
    pub fn generate(regime: &RegimeSpec, split: Split, seed: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("generate", "a dataset needs at least one instance"));
        }
        regime.check(split)?;
        let per = regime.geometry.n_panels() * PANEL_BYTES;
        let mut panels = vec![0u8; count * per];
        let labels: Vec<(u8, Vec<u8>)> = panels
            .par_chunks_mut(per)
            .enumerate()
            .map(|(i, out)| {
                let s = sample_symbolic(regime, split, seed, i as u64)?;
                let bits = render_into(&s, out)?;
                Ok((s.target as u8, bits))
            })
            .collect::<Result<_>>()?;
        let (targets, rules): (Vec<u8>, Vec<Vec<u8>>) = labels.into_iter().unzip();
        Ok(Dataset {
            regime: regime.clone(),
            split,
            seed,
            rule_dim: RULE_DIM,
            panels,
            targets,
            rules: rules.concat(),
        })
    }

    fn manifest(&self) -> Manifest {
        let g = self.geometry();
        let mut m = Manifest::new();
        m.push("format-version", DATASET_VERSION);
        m.push("kind", KIND);
        m.push("count", self.len());
        m.push("geometry", g);
        m.push("n-context", g.n_context());
        m.push("n-answers", g.n_answers());
        m.push("d-r", self.rule_dim);
        m.push("image-size", PANEL_SIZE);
        m.push("split", self.split);
        m.push("seed", self.seed);
        for (k, v) in self.regime.to_pairs() {
            m.push(k, v);
        }
        m
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("write_dataset", "refusing to write an empty dataset"));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let put = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(format!("writing {}", p.display()), e))
        };
        put("panels", &self.panels)?;
        put("targets", &self.targets)?;
        put("rules", &self.rules)?;
        self.manifest().write(&dir.join("manifest"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest");
        if !mpath.is_file() {
            return Err(Error::Manifest {
                path: mpath,
                detail: "no dataset manifest".into(),
            });
        }
        let m = Manifest::read(&mpath)?;
        let version: u32 = m.parse_value("format-version")?;
        if version != DATASET_VERSION {
            return Err(m.error_at(
                "format-version",
                format!("unsupported format version {version} (expected {DATASET_VERSION})"),
            ));
        }
        if m.require("kind")? != KIND {
            return Err(m.error_at("kind", format!("not a dataset (kind '{}')", m.require("kind")?)));
        }
        let geometry: Geometry = m.parse_value("geometry")?;
        let count: usize = m.parse_value("count")?;
        let rule_dim: usize = m.parse_value("d-r")?;
        for (key, want) in [
            ("n-context", geometry.n_context()),
            ("n-answers", geometry.n_answers()),
            ("image-size", PANEL_SIZE),
        ] {
            let got: usize = m.parse_value(key)?;
            if got != want {
                return Err(m.error_at(key, format!("{key}={got} does not match geometry {geometry} ({want})")));
            }
        }
        if count == 0 || rule_dim == 0 {
            return Err(m.error_at("count", "count and d-r must be positive"));
        }
        let held_out = RuleSpec::parse_list(m.get("holdout").unwrap_or(""))?;
        let rules = Rule::parse_list(m.get("rules").unwrap_or(""))?;
        let regime = RegimeSpec::new(geometry, held_out, rules)?;

        let per = geometry.n_panels() * PANEL_BYTES;
        let panels = read_exact(dir, "panels", count * per)?;
        let targets = read_exact(dir, "targets", count)?;
        let n_a = geometry.n_answers();
        if let Some(i) = targets.iter().position(|&t| t as usize >= n_a) {
            return Err(Error::Format {
                path: dir.join("targets"),
                offset: i as u64,
                detail: format!("target {} is not below {n_a}", targets[i]),
            });
        }
        let rules = read_exact(dir, "rules", count * rule_dim)?;
        if let Some(i) = rules.iter().position(|&b| b > 1) {
            return Err(Error::Format {
                path: dir.join("rules"),
                offset: i as u64,
                detail: format!("rule bit {} is not 0 or 1", rules[i]),
            });
        }
        Ok(Dataset {
            regime,
            split: m.parse_value("split")?,
            seed: m.parse_value("seed")?,
            rule_dim,
            panels,
            targets,
            rules,
        })
    }
}

fn read_exact(dir: &Path, name: &str, expected: usize) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() != expected {
        return Err(Error::Format {
            path,
            offset: bytes.len().min(expected) as u64,
            detail: format!("file holds {} bytes, expected {expected}", bytes.len()),
        });
    }
    Ok(bytes)
}

//! Symbolic matrix sampling under held-out regimes.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{encode_rules, rows_fit, Attribute, Rule, RuleSpec};
use super::render::{render_panel, Panel, PANEL_BYTES};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::seed::derive_seed;

/// Fresh rule and row draws per instance before giving up.
const MAX_ATTEMPTS: usize = 1000;
/// Row redraws per attribute while the rows fit more than one rule.
const MAX_ROW_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split '{s}' (expected train, val or test)")))
    }
}

/// Which rules may appear, and which `(rule, attribute)` pairs are kept out
/// of the training and validation splits. With no held-out pairs all three
/// splits share one distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegimeSpec {
    pub geometry: Geometry,
    pub held_out: Vec<RuleSpec>,
    /// Rules drawn from; ones the geometry cannot express are ignored.
    pub rules: Vec<Rule>,
}

impl RegimeSpec {
    pub fn iid(geometry: Geometry) -> Self {
        RegimeSpec {
            geometry,
            held_out: Vec::new(),
            rules: Rule::ALL.to_vec(),
        }
    }

    /// Builds and checks a regime; every split must be satisfiable.
    pub fn new(geometry: Geometry, mut held_out: Vec<RuleSpec>, mut rules: Vec<Rule>) -> Result<Self> {
        held_out.sort();
        held_out.dedup();
        rules.sort();
        rules.dedup();
        let regime = RegimeSpec { geometry, held_out, rules };
        for split in Split::ALL {
            regime.check(split)?;
        }
        Ok(regime)
    }

    pub fn is_iid(&self) -> bool {
        self.held_out.is_empty()
    }

    /// Rules the geometry can express for `attribute`, regardless of regime.
    pub fn grammar(&self, attribute: Attribute) -> Vec<Rule> {
        Rule::ALL
            .into_iter()
            .filter(|r| r.applies(attribute, self.geometry.cols()))
            .collect()
    }

    /// Rules that may be drawn for `attribute` in `split`.
    pub fn candidates(&self, attribute: Attribute, split: Split) -> Vec<Rule> {
        self.grammar(attribute)
            .into_iter()
            .filter(|r| self.rules.contains(r))
            .filter(|&rule| split == Split::Test || !self.held_out.contains(&RuleSpec { rule, attribute }))
            .collect()
    }

    pub fn check(&self, split: Split) -> Result<()> {
        let unsat = |attribute: Attribute| Error::UnsatisfiableRegime {
            attribute: attribute.to_string(),
            split: split.to_string(),
        };
        for a in Attribute::ALL {
            if self.candidates(a, split).is_empty() {
                return Err(unsat(a));
            }
        }
        if split == Split::Test {
            for s in &self.held_out {
                if !self.candidates(s.attribute, split).contains(&s.rule) {
                    return Err(unsat(s.attribute));
                }
            }
        }
        Ok(())
    }

    /// `holdout` and `rules` lines for manifests.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: Vec<String>| v.join(",");
        vec![
            ("holdout", join(self.held_out.iter().map(ToString::to_string).collect())),
            ("rules", join(self.rules.iter().map(ToString::to_string).collect())),
        ]
    }
}

/// The symbolic content of one matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Symbolic {
    /// One rule per attribute, in attribute order.
    pub rules: Vec<RuleSpec>,
    /// Every grid cell in reading order; the last one is the correct answer.
    pub grid: Vec<Panel>,
    pub answers: Vec<Panel>,
    pub target: usize,
}

impl Symbolic {
    pub fn context(&self) -> &[Panel] {
        &self.grid[..self.grid.len() - 1]
    }

    pub fn correct(&self) -> Panel {
        self.grid[self.grid.len() - 1]
    }
}

/// A rendered matrix: context panels in reading order, then the candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixInstance {
    pub symbolic: Symbolic,
    /// `n_panels × PANEL_BYTES` pixels.
    pub panels: Vec<u8>,
    pub target: usize,
    pub rules: Vec<u8>,
}

fn sample_rows(rule: Rule, attribute: Attribute, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let d = attribute.domain_len();
    match rule {
        Rule::Constant => (0..rows).map(|_| vec![rng.gen_range(0..d); cols]).collect(),
        Rule::Progression => {
            let span = (cols - 1) as u8;
            let up = rng.gen_bool(0.5);
            (0..rows)
                .map(|_| {
                    if up {
                        let a = rng.gen_range(0..d - span);
                        (0..cols as u8).map(|c| a + c).collect()
                    } else {
                        let a = rng.gen_range(span..d);
                        (0..cols as u8).map(|c| a - c).collect()
                    }
                })
                .collect()
        }
        Rule::DistributeThree => {
            let subset: Vec<u8> = index::sample(rng, d as usize, 3).into_iter().map(|v| v as u8).collect();
            (0..rows)
                .map(|_| {
                    let mut row = subset.clone();
                    row.shuffle(rng);
                    row
                })
                .collect()
        }
        Rule::Arithmetic => {
            let plus = rng.gen_bool(0.5);
            (0..rows)
                .map(|_| loop {
                    let a = rng.gen_range(0..d);
                    let b = rng.gen_range(1..d);
                    let c = if plus { a.checked_add(b) } else { a.checked_sub(b) };
                    if let Some(c) = c.filter(|&c| c < d) {
                        break vec![a, b, c];
                    }
                })
                .collect()
        }
    }
}

/// Per-attribute grid columns, split into rows.
fn column_rows(grid: &[Panel], attribute: Attribute, cols: usize) -> Vec<Vec<u8>> {
    grid.chunks(cols).map(|row| row.iter().map(|p| p.get(attribute)).collect()).collect()
}

/// Rules of `grammar` the complete grid obeys for `attribute`.
fn fitting_rules(grammar: &[Rule], rows: &[Vec<u8>]) -> Vec<Rule> {
    let views: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
    grammar.iter().copied().filter(|&r| rows_fit(r, &views)).collect()
}

/// Whether every attribute of the complete grid obeys some rule.
fn grid_is_consistent(regime: &RegimeSpec, grid: &[Panel]) -> bool {
    let cols = regime.geometry.cols();
    Attribute::ALL
        .into_iter()
        .all(|a| !fitting_rules(&regime.grammar(a), &column_rows(grid, a, cols)).is_empty())
}

/// Builds `n_a` candidates: the correct panel plus distractors that each
/// change exactly one attribute to another legal value. `admissible` vets
/// distractors. The correct panel's position is uniform.
pub fn generate_answer_set<R: Rng>(
    correct: Panel,
    n_a: usize,
    rng: &mut R,
    admissible: impl Fn(&Panel) -> bool,
) -> Result<(Vec<Panel>, usize)> {
    if n_a < 2 {
        return Err(Error::invalid("generate_answer_set", format!("need at least 2 answers, got {n_a}")));
    }
    let mut pool: Vec<Panel> = Attribute::ALL
        .into_iter()
        .flat_map(|a| (0..a.domain_len()).filter(move |&v| v != correct.get(a)).map(move |v| correct.with(a, v)))
        .filter(|p| admissible(p))
        .collect();
    if pool.len() < n_a - 1 {
        return Err(Error::Generation(format!(
            "only {} admissible distractors for {} answers",
            pool.len(),
            n_a
        )));
    }
    pool.shuffle(rng);
    pool.truncate(n_a - 1);
    let target = rng.gen_range(0..n_a);
    pool.insert(target, correct);
    Ok((pool, target))
}

fn draw_rules(regime: &RegimeSpec, split: Split, rng: &mut ChaCha8Rng) -> Vec<RuleSpec> {
    let forced = (split == Split::Test && !regime.held_out.is_empty())
        .then(|| *regime.held_out.choose(rng).expect("non-empty"));
    Attribute::ALL
        .into_iter()
        .map(|attribute| match forced {
            Some(s) if s.attribute == attribute => s,
            _ => RuleSpec {
                rule: *regime.candidates(attribute, split).choose(rng).expect("checked regime"),
                attribute,
            },
        })
        .collect()
}

fn try_sample(regime: &RegimeSpec, split: Split, rng: &mut ChaCha8Rng) -> Option<Symbolic> {
    let g = regime.geometry;
    let (rows, cols) = (g.rows(), g.cols());
    let rules = draw_rules(regime, split, rng);
    let mut grid = vec![Panel([0; 4]); rows * cols];
    for spec in &rules {
        let grammar = regime.grammar(spec.attribute);
        let values = (0..MAX_ROW_ATTEMPTS)
            .map(|_| sample_rows(spec.rule, spec.attribute, rows, cols, rng))
            .find(|v| fitting_rules(&grammar, v) == [spec.rule])?;
        for (cell, &v) in grid.iter_mut().zip(values.iter().flatten()) {
            *cell = cell.with(spec.attribute, v);
        }
    }
    let correct = grid[rows * cols - 1];
    let admissible = |p: &Panel| {
        let mut alt = grid.clone();
        *alt.last_mut().expect("non-empty grid") = *p;
        !grid_is_consistent(regime, &alt)
    };
    let (answers, target) = generate_answer_set(correct, g.n_answers(), rng, admissible).ok()?;
    Some(Symbolic {
        rules,
        grid,
        answers,
        target,
    })
}

/// Symbolic instance `index` of `split`; a pure function of its arguments.
pub fn sample_symbolic(regime: &RegimeSpec, split: Split, seed: u64, index: u64) -> Result<Symbolic> {
    regime.check(split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, split.as_str(), index));
    (0..MAX_ATTEMPTS)
        .find_map(|_| try_sample(regime, split, &mut rng))
        .ok_or_else(|| Error::Generation(format!("no valid {split} instance after {MAX_ATTEMPTS} attempts")))
}

/// Writes the rendered panels of `symbolic` into `out`
/// (`n_panels × PANEL_BYTES`) and returns its rule vector.
pub fn render_into(symbolic: &Symbolic, out: &mut [u8]) -> Result<Vec<u8>> {
    let panels = symbolic.context().iter().chain(&symbolic.answers);
    for (chunk, panel) in out.chunks_exact_mut(PANEL_BYTES).zip(panels) {
        chunk.copy_from_slice(&render_panel(panel)?);
    }
    encode_rules(&symbolic.rules)
}

/// Rendered instance `index` of `split`.
pub fn sample_matrix(regime: &RegimeSpec, split: Split, seed: u64, index: u64) -> Result<MatrixInstance> {
    let symbolic = sample_symbolic(regime, split, seed, index)?;
    let mut panels = vec![0u8; regime.geometry.n_panels() * PANEL_BYTES];
    let rules = render_into(&symbolic, &mut panels)?;
    Ok(MatrixInstance {
        target: symbolic.target,
        symbolic,
        panels,
        rules,
    })
}

//! Independent rule oracle for symbolic matrices.

use std::collections::BTreeSet;

use pong::data::{Attribute, Panel, Rule, Symbolic};
use pong::geometry::Geometry;

/// Values of one attribute along a row of the grid.
pub fn row_values(grid: &[Panel], cols: usize, row: usize, a: Attribute) -> Vec<i32> {
    grid[row * cols..(row + 1) * cols].iter().map(|p| i32::from(p.get(a))).collect()
}

/// Completions of the last row's missing cell for one attribute, derived
/// only from the complete rows: every rule those rows admit predicts a value.
pub fn predicted_completions(context: &[Panel], rows: usize, cols: usize, a: Attribute) -> BTreeSet<i32> {
    let complete: Vec<Vec<i32>> = (0..rows - 1).map(|r| row_values(context, cols, r, a)).collect();
    let last: Vec<i32> = context[(rows - 1) * cols..].iter().map(|p| i32::from(p.get(a))).collect();
    let mut out = BTreeSet::new();
    if complete.iter().all(|r| r.iter().all(|&v| v == r[0])) && last.iter().all(|&v| v == last[0]) {
        out.insert(last[0]);
    }
    for step in [1, -1] {
        if complete.iter().all(|r| (1..cols).all(|c| r[c] - r[c - 1] == step))
            && (1..last.len()).all(|c| last[c] - last[c - 1] == step)
        {
            out.insert(last[cols - 2] + step);
        }
    }
    if cols == 3 {
        let set = |r: &[i32]| r.iter().copied().collect::<BTreeSet<_>>();
        let first = set(&complete[0]);
        if first.len() == 3 && complete.iter().all(|r| set(r) == first) {
            let seen = set(&last);
            if seen.len() == 2 && seen.is_subset(&first) {
                out.extend(first.difference(&seen));
            }
        }
        if a != Attribute::ShapeType {
            for sign in [1, -1] {
                if complete.iter().all(|r| r[1] >= 1 && r[2] == r[0] + sign * r[1]) && last[1] >= 1 {
                    out.insert(last[0] + sign * last[1]);
                }
            }
        }
    }
    out
}

/// Whether the complete rows of one attribute obey `rule`, written
/// independently of the generator.
pub fn obeys(rule: Rule, grid: &[Panel], rows: usize, cols: usize, a: Attribute) -> bool {
    let r: Vec<Vec<i32>> = (0..rows).map(|i| row_values(grid, cols, i, a)).collect();
    match rule {
        Rule::Constant => r.iter().all(|x| x.iter().all(|&v| v == x[0])),
        Rule::Progression => [1, -1].iter().any(|&s| r.iter().all(|x| (1..cols).all(|c| x[c] - x[c - 1] == s))),
        Rule::DistributeThree => {
            let sorted = |x: &Vec<i32>| {
                let mut y = x.clone();
                y.sort();
                y
            };
            cols == 3 && {
                let f = sorted(&r[0]);
                f[0] < f[1] && f[1] < f[2] && r.iter().all(|x| sorted(x) == f)
            }
        }
        Rule::Arithmetic => {
            cols == 3
                && a != Attribute::ShapeType
                && [1, -1].iter().any(|&s| r.iter().all(|x| x[1] >= 1 && x[2] == x[0] + s * x[1]))
        }
    }
}

/// First reason `s` is not a sound instance of geometry `g`: the target must
/// be the only candidate consistent with every attribute's derivable
/// completions, distractors must change exactly one attribute, and each
/// labelled rule must be the only rule its attribute's grid obeys.
pub fn instance_violation(s: &Symbolic, g: Geometry) -> Option<String> {
    let (rows, cols) = (g.rows(), g.cols());
    if s.answers.len() != g.n_answers() || s.answers.get(s.target) != Some(&s.correct()) {
        return Some("target is not the grid completion".into());
    }
    let predicted: Vec<BTreeSet<i32>> =
        Attribute::ALL.iter().map(|&a| predicted_completions(s.context(), rows, cols, a)).collect();
    let matching: Vec<usize> = (0..s.answers.len())
        .filter(|&k| Attribute::ALL.iter().all(|&a| predicted[a.index()].contains(&i32::from(s.answers[k].get(a)))))
        .collect();
    if matching != [s.target] {
        return Some(format!("candidates {matching:?} fit the context, target {}", s.target));
    }
    for (k, p) in s.answers.iter().enumerate() {
        let diff = Attribute::ALL.iter().filter(|&&a| p.get(a) != s.correct().get(a)).count();
        if diff != usize::from(k != s.target) {
            return Some(format!("candidate {k} differs in {diff} attributes"));
        }
    }
    if s.answers.iter().collect::<BTreeSet<_>>().len() != s.answers.len() {
        return Some("duplicate candidates".into());
    }
    for r in &s.rules {
        let fits: Vec<Rule> = Rule::ALL.into_iter().filter(|&x| obeys(x, &s.grid, rows, cols, r.attribute)).collect();
        if fits != [r.rule] {
            return Some(format!("{r} labelled but the grid fits {fits:?}"));
        }
    }
    None
}

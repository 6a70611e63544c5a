//! Attributes, rules and the multi-hot rule encoding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Panel attributes, in rule-vector block order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    ShapeType,
    Size,
    Shade,
    Count,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::ShapeType, Attribute::Size, Attribute::Shade, Attribute::Count];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of values; attribute values are indices into this domain.
    pub fn domain_len(self) -> u8 {
        match self {
            Attribute::ShapeType => 4,
            Attribute::Size => 5,
            Attribute::Shade => 6,
            Attribute::Count => 4,
        }
    }

    /// Whether index arithmetic is meaningful.
    pub fn is_numeric(self) -> bool {
        self != Attribute::ShapeType
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::ShapeType => "shape-type",
            Attribute::Size => "size",
            Attribute::Shade => "shade",
            Attribute::Count => "count",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attribute '{s}' (expected shape-type, size, shade or count)")))
    }
}

/// Row relations, in rule-vector slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Constant,
    Progression,
    DistributeThree,
    Arithmetic,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Constant, Rule::Progression, Rule::DistributeThree, Rule::Arithmetic];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the relation is defined on rows of `cols` panels.
    pub fn supports_cols(self, cols: usize) -> bool {
        match self {
            Rule::Constant | Rule::Progression => cols >= 2,
            Rule::DistributeThree | Rule::Arithmetic => cols == 3,
        }
    }

    /// Whether the rule may govern `attribute` in a grid with `cols` columns.
    pub fn applies(self, attribute: Attribute, cols: usize) -> bool {
        self.supports_cols(cols) && (self != Rule::Arithmetic || attribute.is_numeric())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Constant => "constant",
            Rule::Progression => "progression",
            Rule::DistributeThree => "distribute-three",
            Rule::Arithmetic => "arithmetic",
        }
    }

    /// Parses a comma-separated rule list; empty input yields every rule.
    pub fn parse_list(list: &str) -> Result<Vec<Rule>> {
        let mut rules: Vec<Rule> = list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if rules.is_empty() {
            return Ok(Rule::ALL.to_vec());
        }
        rules.sort();
        rules.dedup();
        Ok(rules)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown rule '{s}' (expected constant, progression, distribute-three or arithmetic)"
            ))
        })
    }
}

/// A rule bound to the attribute it governs, written `rule:attribute`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleSpec {
    pub rule: Rule,
    pub attribute: Attribute,
}

impl RuleSpec {
    pub fn new(rule: Rule, attribute: Attribute) -> Result<Self> {
        if rule == Rule::Arithmetic && !attribute.is_numeric() {
            return Err(Error::Config(format!("arithmetic cannot govern the non-numeric attribute {attribute}")));
        }
        Ok(RuleSpec { rule, attribute })
    }

    /// Parses a comma-separated list of `rule:attribute` pairs.
    pub fn parse_list(list: &str) -> Result<Vec<RuleSpec>> {
        let mut specs: Vec<RuleSpec> = list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        specs.sort();
        specs.dedup();
        Ok(specs)
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.rule, self.attribute)
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (rule, attribute) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected rule:attribute, got '{s}'")))?;
        RuleSpec::new(rule.trim().parse()?, attribute.trim().parse()?)
    }
}

/// Length of the rule vector: one block of rule slots per attribute.
pub const RULE_DIM: usize = Attribute::ALL.len() * Rule::ALL.len();

/// Multi-hot vector with bit `attribute·4 + rule` set for every assignment.
pub fn encode_rules(assignments: &[RuleSpec]) -> Result<Vec<u8>> {
    let mut bits = vec![0u8; RULE_DIM];
    let mut seen = [false; 4];
    for s in assignments {
        let a = s.attribute.index();
        if seen[a] {
            return Err(Error::invalid("encode_rules", format!("attribute {} is assigned twice", s.attribute)));
        }
        seen[a] = true;
        bits[a * Rule::ALL.len() + s.rule.index()] = 1;
    }
    Ok(bits)
}

/// Inverse of [`encode_rules`]: the argmax of each block, lowest slot on
/// ties. Also decodes rule logits or probabilities.
pub fn decode_rules<T: PartialOrd + Copy>(bits: &[T]) -> Result<Vec<RuleSpec>> {
    let n = Rule::ALL.len();
    if bits.len() != RULE_DIM {
        return Err(Error::shape("decode_rules", format!("expected {RULE_DIM} values, got {}", bits.len())));
    }
    let mut out = Vec::new();
    for attribute in Attribute::ALL {
        let block = &bits[attribute.index() * n..(attribute.index() + 1) * n];
        let best = (0..n).fold(0, |b, i| if block[i] > block[b] { i } else { b });
        out.push(RuleSpec {
            rule: Rule::ALL[best],
            attribute,
        });
    }
    Ok(out)
}

/// Whether the complete rows of one attribute obey `rule`.
pub fn rows_fit(rule: Rule, rows: &[&[u8]]) -> bool {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || !rule.supports_cols(cols) || rows.iter().any(|r| r.len() != cols) {
        return false;
    }
    match rule {
        Rule::Constant => rows.iter().all(|r| r.iter().all(|&v| v == r[0])),
        Rule::Progression => [1i16, -1].into_iter().any(|step| {
            rows.iter()
                .all(|r| r.windows(2).all(|w| i16::from(w[1]) - i16::from(w[0]) == step))
        }),
        Rule::DistributeThree => {
            let sorted = |r: &[u8]| {
                let mut s = r.to_vec();
                s.sort_unstable();
                s
            };
            let first = sorted(rows[0]);
            first.windows(2).all(|w| w[0] != w[1]) && rows.iter().all(|r| sorted(r) == first)
        }
        Rule::Arithmetic => [1i16, -1].into_iter().any(|sign| {
            rows.iter()
                .all(|r| r[1] >= 1 && i16::from(r[2]) == i16::from(r[0]) + sign * i16::from(r[1]))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_checks() {
        assert!(rows_fit(Rule::Constant, &[&[2, 2, 2], &[0, 0, 0]]));
        assert!(rows_fit(Rule::Progression, &[&[0, 1, 2], &[2, 3, 4]]));
        assert!(!rows_fit(Rule::Progression, &[&[0, 1, 2], &[4, 3, 2]]));
        assert!(rows_fit(Rule::DistributeThree, &[&[0, 3, 5], &[5, 0, 3]]));
        assert!(!rows_fit(Rule::DistributeThree, &[&[0, 3, 3], &[3, 0, 3]]));
        assert!(rows_fit(Rule::Arithmetic, &[&[1, 2, 3], &[0, 1, 1]]));
        assert!(rows_fit(Rule::Arithmetic, &[&[3, 2, 1], &[4, 1, 3]]));
        assert!(!rows_fit(Rule::Arithmetic, &[&[1, 0, 1]]));
        assert!(!rows_fit(Rule::DistributeThree, &[&[0, 1], &[1, 0]]));
    }

    #[test]
    fn spec_parsing() {
        let s: RuleSpec = "progression:shade".parse().unwrap();
        assert_eq!(s.to_string(), "progression:shade");
        assert!("arithmetic:shape-type".parse::<RuleSpec>().is_err());
        assert!("wobble:size".parse::<RuleSpec>().is_err());
        assert_eq!(Rule::parse_list("").unwrap(), Rule::ALL.to_vec());
    }
}

//! Matrix geometries: grid layout, panel counts and the reasoner's first-layer
//! grouping.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Geometry {
    /// 3×3 progressive matrix, 8 context panels, 8 answers.
    Rpm3x3,
    /// 2×3 analogy, 5 context panels, 4 answers.
    Vap2x3,
    /// 2×2 analogy, 3 context panels, 4 answers.
    A2x2,
}

impl Geometry {
    pub const ALL: [Geometry; 3] = [Geometry::Rpm3x3, Geometry::Vap2x3, Geometry::A2x2];

    pub fn rows(self) -> usize {
        match self {
            Geometry::Rpm3x3 => 3,
            Geometry::Vap2x3 | Geometry::A2x2 => 2,
        }
    }

    pub fn cols(self) -> usize {
        match self {
            Geometry::Rpm3x3 | Geometry::Vap2x3 => 3,
            Geometry::A2x2 => 2,
        }
    }

    pub fn n_context(self) -> usize {
        self.rows() * self.cols() - 1
    }

    pub fn n_answers(self) -> usize {
        match self {
            Geometry::Rpm3x3 => 8,
            Geometry::Vap2x3 | Geometry::A2x2 => 4,
        }
    }

    pub fn n_panels(self) -> usize {
        self.n_context() + self.n_answers()
    }

    /// Channel groups of the first reasoner block; the reasoner sees
    /// `n_context + 1` channels.
    pub fn first_layer_groups(self) -> usize {
        match self {
            Geometry::Rpm3x3 | Geometry::Vap2x3 => 3,
            Geometry::A2x2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Rpm3x3 => "rpm3x3",
            Geometry::Vap2x3 => "vap2x3",
            Geometry::A2x2 => "a2x2",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Geometry::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown geometry '{s}' (expected rpm3x3, vap2x3 or a2x2)")))
    }
}

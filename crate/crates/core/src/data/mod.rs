//! Procedural matrix generator: rule grammar, rasterizer, impartial answer
//! sets, held-out regimes and the on-disk dataset format.

mod grammar;
mod io;
mod render;
mod sample;

pub use grammar::{decode_rules, encode_rules, rows_fit, Attribute, Rule, RuleSpec, RULE_DIM};
pub use io::{Dataset, DATASET_VERSION};
pub use render::{render_empty, render_panel, Panel, PANEL_BYTES, PANEL_SIZE};
pub use sample::{
    generate_answer_set, render_into, sample_matrix, sample_symbolic, MatrixInstance, RegimeSpec, Split, Symbolic,
};

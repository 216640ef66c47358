use serde::{Deserialize, Serialize};

/// Enumeration budgets. Exceeding any of them is a hard error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    /// Variables in the widest joint table of an elimination.
    pub max_table_width: usize,
    /// Image sites whose `2^n` block-spin configurations are enumerated.
    pub max_image_sites: usize,
    /// Sites of a character expansion.
    pub max_expand_sites: usize,
    /// Candidate polymers in hard-core subset enumerations.
    pub max_polymers: usize,
    /// Sites in a brute-force sum (used by oracles and small helpers).
    pub max_brute_sites: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_table_width: 24,
            max_image_sites: 24,
            max_expand_sites: 20,
            max_polymers: 24,
            max_brute_sites: 24,
        }
    }
}

//! Bundled description files.
//!
//! A path that does not exist on disk resolves to the bundled file with the
//! same stem, so `examples/coulomb.json` works from any directory.

use anyhow::{bail, Context, Result};
use std::path::Path;

/// The example library.
pub const EXAMPLES: [(&str, &str); 9] = [
    ("coulomb", include_str!("../data/examples/coulomb.json")),
    ("rotation_skew", include_str!("../data/examples/rotation_skew.json")),
    ("kirchhoff_dirac", include_str!("../data/examples/kirchhoff_dirac.json")),
    ("rc_circuit", include_str!("../data/examples/rc_circuit.json")),
    ("van_der_pol", include_str!("../data/examples/van_der_pol.json")),
    ("gradient", include_str!("../data/examples/gradient.json")),
    ("primal_dual", include_str!("../data/examples/primal_dual.json")),
    ("coupled_gradient_net", include_str!("../data/examples/coupled_gradient_net.json")),
    ("quartic_integrator", include_str!("../data/examples/quartic_integrator.json")),
];

/// Networks bundled next to the library.
pub const NETWORKS: [(&str, &str); 2] = [
    ("primal_dual_net", include_str!("../data/networks/primal_dual_net.json")),
    ("unbounded_net", include_str!("../data/networks/unbounded_net.json")),
];

pub fn bundled(stem: &str) -> Option<&'static str> {
    EXAMPLES.iter().chain(NETWORKS.iter()).find(|(n, _)| *n == stem).map(|(_, t)| *t)
}

/// Reads `path`, falling back to the bundled file of the same stem.
pub fn load(path: &Path) -> Result<String> {
    if path.exists() {
        return std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    match bundled(stem) {
        Some(text) => Ok(text.to_string()),
        None => bail!("{} not found and no bundled file named {stem}", path.display()),
    }
}

//! Shipped example configurations.

use crate::config::{parse_config_str, RunConfig};

pub const NS_JSON: &str = include_str!("../presets/ns.json");
pub const NS_PRODUCT_JSON: &str = include_str!("../presets/ns_product.json");
pub const ROT_JSON: &str = include_str!("../presets/rot.json");

/// Preset names accepted by [`by_name`].
pub const NAMES: [&str; 3] = ["ns", "ns-product", "rot"];

/// Sine fiber map with base modulation of the rotation term: zero-measure attractor.
pub fn ns() -> RunConfig {
    parse_config_str(NS_JSON).expect("ns preset is valid")
}

/// The unmodulated sine fiber: every fiber carries the same Morse–Smale map.
pub fn ns_product() -> RunConfig {
    parse_config_str(NS_PRODUCT_JSON).expect("ns-product preset is valid")
}

/// Near-golden rotation with a weak sine term: transitive regime.
pub fn rot() -> RunConfig {
    parse_config_str(ROT_JSON).expect("rot preset is valid")
}

pub fn by_name(name: &str) -> Option<RunConfig> {
    match name {
        "ns" => Some(ns()),
        "ns-product" | "ns_product" => Some(ns_product()),
        "rot" => Some(rot()),
        _ => None,
    }
}

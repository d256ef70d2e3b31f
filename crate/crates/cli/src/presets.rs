//! Built-in run configurations for the three experiment shapes.

pub const NAMES: [&str; 3] = ["systematicity-sentiment", "compositionality-nli", "transitivity-lexical"];

pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "systematicity-sentiment" => Some(include_str!("../presets/systematicity-sentiment.json")),
        "compositionality-nli" => Some(include_str!("../presets/compositionality-nli.json")),
        "transitivity-lexical" => Some(include_str!("../presets/transitivity-lexical.json")),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RelationConfig, RunConfig};
    use morphcheck_core::engine::Shape;

    #[test]
    fn presets_parse_and_pin_their_shapes() {
        let shapes = [Shape::OrderedPairs, Shape::UnorderedPairs, Shape::OrderedTriplets];
        for (name, shape) in NAMES.iter().zip(shapes) {
            let cfg = RunConfig::parse(get(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.enumeration.shape, shape, "{name}");
            assert!(cfg.enumeration.sample.is_none());
        }
        let cfg = RunConfig::parse(get("compositionality-nli").unwrap()).unwrap();
        assert!(matches!(
            cfg.relations[0],
            RelationConfig::PairwiseCompositionality { connective: morphcheck_core::properties::Connective::Iff, .. }
        ));
        assert!(get("nope").is_none());
    }
}

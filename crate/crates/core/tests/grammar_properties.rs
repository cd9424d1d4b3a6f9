use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use san::data::{synth_expression, SynthConfig};
use san::grammar::{
    from_sexpr, parse_markup, render_latex, to_sexpr, tree_equal, CommandSet, ParseTree,
};
use san::training::{samples_to_expr, tree_to_samples};

fn tree_from_seed(seed: u64, max_length: usize, max_depth: usize) -> ParseTree {
    let config = SynthConfig {
        max_length,
        max_depth,
        canvas_width: 256,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_expression(&mut rng, &config, &CommandSet::default())
        .unwrap()
        .0
}

fn fragment() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "a", "b", "x", "1", "+", "=", "^", "_", "{", "}", " ", "\\frac", "\\sqrt", "\\limits",
        "\\bogus", "\\",
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn markup_round_trip_is_a_fixed_point(seed in any::<u64>(), len in 1usize..12, depth in 1usize..4) {
        let tree = tree_from_seed(seed, len, depth);
        let commands = CommandSet::default();
        let markup = render_latex(&tree, &commands);
        let again = parse_markup(&markup, tree.symbols(), &commands).unwrap();
        prop_assert!(tree_equal(&tree, &again), "{markup}");
        prop_assert_eq!(render_latex(&again, &commands), markup);
    }

    #[test]
    fn sexpr_round_trip(seed in any::<u64>(), len in 1usize..12, depth in 1usize..4) {
        let tree = tree_from_seed(seed, len, depth);
        let text = to_sexpr(&tree);
        let back = from_sexpr(&text, tree.symbols()).unwrap();
        prop_assert!(tree_equal(&tree, &back));
        prop_assert_eq!(to_sexpr(&back), text);
    }

    #[test]
    fn decode_samples_rebuild_the_tree(seed in any::<u64>(), len in 1usize..12, depth in 1usize..4) {
        let tree = tree_from_seed(seed, len, depth);
        let samples = tree_to_samples(&tree).unwrap();
        let expr = samples_to_expr(&samples, tree.symbols().len()).unwrap();
        prop_assert_eq!(expr, tree.to_expr());
    }

    #[test]
    fn arbitrary_markup_never_panics(parts in prop::collection::vec(fragment(), 0..24)) {
        let commands = CommandSet::default();
        let synth = SynthConfig::default();
        let table = synth.symbol_table().unwrap();
        let markup = parts.concat();
        if let Ok(tree) = parse_markup(&markup, &table, &commands) {
            let rendered = render_latex(&tree, &commands);
            let again = parse_markup(&rendered, &table, &commands).unwrap();
            prop_assert!(tree_equal(&tree, &again), "{markup:?} -> {rendered:?}");
        }
    }
}

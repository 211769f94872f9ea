//! Regenerates `data/synthetic200.mrg`, a small treebank drawn from a
//! hand-written PCFG. Leaves are part-of-speech tags, so the yields carry
//! real attachment ambiguity.
//!
//! ```text
//! cargo run -p dop-core --example gen_synthetic > crates/core/data/synthetic200.mrg
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Expansion = (&'static [&'static str], u32);

const RULES: &[(&str, &[Expansion])] = &[
    ("S", &[(&["NP", "VP"], 9), (&["VP"], 1)]),
    (
        "NP",
        &[
            (&["det", "noun"], 5),
            (&["det", "adj", "noun"], 2),
            (&["det", "noun", "noun"], 1),
            (&["pro"], 3),
            (&["NP", "PP"], 2),
        ],
    ),
    (
        "VP",
        &[
            (&["verb", "NP"], 6),
            (&["verb", "NP", "PP"], 2),
            (&["VP", "PP"], 1),
            (&["aux", "verb", "NP"], 1),
            (&["verb"], 1),
        ],
    ),
    ("PP", &[(&["prep", "NP"], 1)]),
];

fn expand(rng: &mut ChaCha8Rng, label: &str, depth: usize) -> Option<String> {
    let Some((_, options)) = RULES.iter().find(|(l, _)| *l == label) else {
        return Some(label.to_string());
    };
    if depth == 0 {
        return None;
    }
    let total: u32 = options.iter().map(|(_, w)| w).sum();
    let mut pick = rng.gen_range(0..total);
    let (rhs, _) = options.iter().find(|(_, w)| {
        let hit = pick < *w;
        pick = pick.saturating_sub(*w);
        hit
    })?;
    let kids: Option<Vec<String>> = rhs.iter().map(|c| expand(rng, c, depth - 1)).collect();
    Some(format!("({label} {})", kids?.join(" ")))
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1995);
    let mut out = Vec::new();
    while out.len() < 200 {
        if let Some(tree) = expand(&mut rng, "S", 7) {
            let len = tree.split(' ').filter(|t| !t.starts_with('(')).count();
            if (3..=12).contains(&len) {
                out.push(tree);
            }
        }
    }
    println!("# synthetic treebank: 200 trees from a fixed PCFG, seed 1995");
    for t in out {
        println!("{t}");
    }
}

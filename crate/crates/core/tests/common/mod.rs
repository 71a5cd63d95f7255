//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use ontolearn::embedstore::{EmbeddingStore, Pooling};
use ontolearn::taxo::TaxonomyGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-level planted taxonomy: `roots` top types, the rest split evenly
/// under them. Edges are (child, parent).
pub fn planted_taxonomy(n: usize, roots: usize) -> TaxonomyGraph {
    let types: Vec<String> = (0..n).map(|i| format!("type{i:02}")).collect();
    let edges = (roots..n).map(|c| (c, c % roots));
    TaxonomyGraph::new(types, edges).unwrap()
}

/// Standard-normal-ish embeddings (sum of uniforms) for every type.
pub fn random_store(ids: &[String], dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = ids.iter().map(|id| {
        let v: Vec<f32> = (0..dim)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0f32..1.0)).sum::<f32>() * 0.866)
            .collect();
        (id.clone(), v)
    });
    EmbeddingStore::from_rows("synthetic", dim, Pooling::Mean, false, rows).unwrap()
}

pub mod http;
pub mod oracles;

use ontolearn::corpus::Document;
use std::collections::{BTreeMap, BTreeSet};

/// Terms whose shorter member must never match inside the longer one.
pub const TRAP_PAIRS: [(&str, &str); 10] = [
    ("cell", "cellular"),
    ("ion", "ionization"),
    ("graph", "graphene"),
    ("metal", "metallic"),
    ("acid", "acidic"),
    ("press", "pressure"),
    ("form", "formation"),
    ("port", "portable"),
    ("bond", "bonding"),
    ("cast", "casting"),
];

pub const PLAIN_TERMS: [&str; 30] = [
    "heat flux",
    "thin film",
    "x-ray diffraction",
    "band gap",
    "quantum dot",
    "neural network",
    "protein",
    "enzyme",
    "polymer",
    "catalyst",
    "semiconductor",
    "alloy",
    "crystal lattice",
    "grain boundary",
    "dopant",
    "oxide layer",
    "carbon nanotube",
    "solar cell",
    "fuel",
    "laser",
    "magnet",
    "zeolite",
    "perovskite",
    "ceramic",
    "glass transition",
    "spin",
    "phonon",
    "electrolyte",
    "membrane",
    "photon",
];

const FILLER: [&str; 12] = [
    "we",
    "study",
    "observe",
    "under",
    "conditions",
    "sample",
    "results",
    "show",
    "data",
    "measured",
    "across",
    "several",
];

/// 50 terms, trap pairs first.
pub fn planted_terms() -> Vec<String> {
    TRAP_PAIRS
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .chain(PLAIN_TERMS)
        .map(String::from)
        .collect()
}

/// Surface a term with casing and punctuation variations.
fn decorate(term: &str, style: usize) -> String {
    match style % 6 {
        0 => term.to_string(),
        1 => term.to_uppercase(),
        2 => format!("({term})"),
        3 => format!("{term},"),
        4 => format!("{term}-based"),
        _ => {
            let mut c = term.chars();
            let first = c.next().unwrap().to_uppercase().collect::<String>();
            format!("{first}{}.", c.as_str())
        }
    }
}

/// 20 documents with known term occurrences. Returns the documents and the
/// planted term → doc-id index (every term present, possibly empty).
pub fn planted_corpus() -> (Vec<Document>, BTreeMap<String, BTreeSet<String>>) {
    let terms = planted_terms();
    let mut truth: BTreeMap<String, BTreeSet<String>> = terms.iter().map(|t| (t.clone(), BTreeSet::new())).collect();
    let mut docs = Vec::new();
    for d in 0..20usize {
        let id = format!("doc{d:02}");
        let mut words: Vec<String> = Vec::new();
        let mut planted: Vec<&str> = Vec::new();
        for (k, term) in terms.iter().enumerate() {
            // deterministic sparse pattern, roughly 1 in 5 pairs
            if (d * 7 + k * 3) % 5 == 0 && (d + k) % 3 != 0 {
                planted.push(term);
            }
        }
        // trap-only occurrences: the long form without the short one
        let (short, long) = TRAP_PAIRS[d % TRAP_PAIRS.len()];
        if !planted.contains(&short) {
            words.push(decorate(long, d));
            truth.get_mut(long).unwrap().insert(id.clone());
        }
        for (i, term) in planted.iter().enumerate() {
            words.push(FILLER[(d + i) % FILLER.len()].to_string());
            words.push(decorate(term, d + i));
            truth.get_mut(*term).unwrap().insert(id.clone());
            if *term == "solar cell" {
                // "cell" is a bounded substring of "solar cell"
                truth.get_mut("cell").unwrap().insert(id.clone());
            }
        }
        words.push(FILLER[d % FILLER.len()].to_string());
        // a term glued to alphanumerics must not count
        words.push(format!("sub{}", PLAIN_TERMS[d % PLAIN_TERMS.len()].replace(' ', "")));
        let (title, text) = if d % 4 == 0 && !words.is_empty() {
            (words[0].clone(), words[1..].join(" "))
        } else {
            (format!("Report {d}"), words.join(" "))
        };
        docs.push(Document { id, title, text });
    }
    (docs, truth)
}

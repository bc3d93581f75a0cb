//! Synthetic corpora with planted subpopulations that a bag-of-words
//! classifier gets wrong: a subpopulation of one class is written mostly
//! with another class's words plus a marker word.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::WireRecord;
use crate::rng::stream;

pub const BUSINESS: [&str; 40] = [
    "market",
    "shares",
    "investor",
    "profit",
    "revenue",
    "company",
    "merger",
    "stock",
    "dividend",
    "bank",
    "loan",
    "interest",
    "inflation",
    "retail",
    "supplier",
    "contract",
    "budget",
    "tax",
    "export",
    "import",
    "currency",
    "bond",
    "fund",
    "capital",
    "startup",
    "venture",
    "quarterly",
    "forecast",
    "sales",
    "customer",
    "pricing",
    "debt",
    "audit",
    "acquisition",
    "board",
    "executive",
    "factory",
    "commerce",
    "trade",
    "wholesale",
];

pub const SPORTS: [&str; 40] = [
    "match",
    "team",
    "coach",
    "goal",
    "player",
    "league",
    "stadium",
    "tournament",
    "score",
    "referee",
    "champion",
    "final",
    "striker",
    "keeper",
    "innings",
    "wicket",
    "racket",
    "serve",
    "sprint",
    "marathon",
    "medal",
    "podium",
    "fans",
    "derby",
    "transfer",
    "penalty",
    "captain",
    "victory",
    "defeat",
    "draw",
    "pitch",
    "court",
    "lap",
    "relay",
    "squad",
    "fixture",
    "playoff",
    "trophy",
    "dribble",
    "tackle",
];

pub const SCIENCE: [&str; 40] = [
    "protein",
    "genome",
    "telescope",
    "galaxy",
    "molecule",
    "physics",
    "chemistry",
    "neuron",
    "experiment",
    "hypothesis",
    "laboratory",
    "particle",
    "quantum",
    "fossil",
    "climate",
    "species",
    "enzyme",
    "vaccine",
    "orbit",
    "asteroid",
    "electron",
    "catalyst",
    "reactor",
    "microscope",
    "algorithm",
    "satellite",
    "isotope",
    "bacteria",
    "virus",
    "cell",
    "evolution",
    "mineral",
    "glacier",
    "volcano",
    "spectrum",
    "plasma",
    "theorem",
    "sensor",
    "polymer",
    "habitat",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBias {
    /// Gold class of the subpopulation.
    pub class: String,
    /// Class whose vocabulary the subpopulation borrows.
    pub borrowed_from: String,
    /// How many borrowed words per text, drawn from the first
    /// `borrowed_pool` words of the lending vocabulary.
    pub borrowed_words: usize,
    pub borrowed_pool: usize,
    /// Word that characterises the subpopulation.
    pub marker: String,
    pub marker_rate: f64,
    /// Word present in every subpopulation text and in a share of the
    /// rest of the class, so it describes the subpopulation imprecisely.
    pub decoy: Option<String>,
    pub decoy_main_rate: f64,
    pub train: usize,
    pub validation: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub words_per_text: usize,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub pool_per_class: usize,
    pub biases: Vec<PlantedBias>,
}

impl PlantedSpec {
    /// Three classes, 600 train and 300 validation examples, one planted
    /// business subpopulation written with sports words.
    pub fn single_bias() -> Self {
        Self {
            words_per_text: 8,
            train_per_class: 200,
            validation_per_class: 100,
            pool_per_class: 100,
            biases: vec![PlantedBias {
                class: "business".into(),
                borrowed_from: "sports".into(),
                borrowed_words: 6,
                borrowed_pool: 8,
                marker: "earnings".into(),
                marker_rate: 0.9,
                decoy: Some("season".into()),
                decoy_main_rate: 0.5,
                train: 5,
                validation: 25,
                pool: 25,
            }],
        }
    }

    /// Adds a science subpopulation written with business words.
    pub fn two_biases() -> Self {
        let mut spec = Self::single_bias();
        spec.biases.push(PlantedBias {
            class: "science".into(),
            borrowed_from: "business".into(),
            borrowed_words: 6,
            borrowed_pool: 8,
            marker: "patent".into(),
            marker_rate: 1.0,
            decoy: None,
            decoy_main_rate: 0.0,
            train: 5,
            validation: 25,
            pool: 25,
        });
        spec
    }
}

pub fn vocabulary(class: &str) -> &'static [&'static str] {
    match class {
        "business" => &BUSINESS,
        "sports" => &SPORTS,
        "science" => &SCIENCE,
        _ => &[],
    }
}

pub const CLASSES: [&str; 3] = ["business", "sports", "science"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpus {
    pub records: Vec<WireRecord>,
    /// Ids of planted examples per class.
    pub planted: BTreeMap<String, Vec<String>>,
}

impl PlantedCorpus {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

fn main_text(rng: &mut impl Rng, class: &str, n: usize, decoy: Option<(&str, f64)>) -> String {
    let mut words: Vec<&str> = vocabulary(class).choose_multiple(rng, n).copied().collect();
    if let Some((d, rate)) = decoy {
        if rng.random_bool(rate) {
            words[0] = d;
        }
    }
    words.shuffle(rng);
    words.join(" ")
}

fn planted_text(rng: &mut impl Rng, bias: &PlantedBias, n: usize) -> String {
    let lend = &vocabulary(&bias.borrowed_from)[..bias.borrowed_pool];
    let mut words: Vec<&str> = lend.choose_multiple(rng, bias.borrowed_words).copied().collect();
    if let Some(d) = &bias.decoy {
        words.push(d);
    }
    if rng.random_bool(bias.marker_rate) {
        words.push(&bias.marker);
    }
    let own: Vec<&str> = vocabulary(&bias.class)
        .choose_multiple(rng, n.saturating_sub(words.len()))
        .copied()
        .collect();
    words.extend(own);
    words.truncate(n);
    words.shuffle(rng);
    words.join(" ")
}

/// Deterministic per seed. Ids look like `train-business-0007`; planted
/// examples use `p` in place of the class sequence prefix
/// (`train-business-p003`).
pub fn planted_corpus(spec: &PlantedSpec, seed: u64) -> PlantedCorpus {
    let mut rng = stream(seed, "synthetic/planted");
    let mut records = Vec::new();
    let mut planted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let splits = [
        ("train", spec.train_per_class),
        ("validation", spec.validation_per_class),
        ("pool", spec.pool_per_class),
    ];
    for class in CLASSES {
        let bias = spec.biases.iter().find(|b| b.class == class);
        let decoy = bias.and_then(|b| b.decoy.as_deref().map(|d| (d, b.decoy_main_rate)));
        for (split, total) in splits {
            let n_planted = bias.map_or(0, |b| match split {
                "train" => b.train,
                "validation" => b.validation,
                _ => b.pool,
            });
            let n_planted = n_planted.min(total);
            for k in 0..total - n_planted {
                records.push(WireRecord {
                    id: format!("{split}-{class}-{k:04}"),
                    text: main_text(&mut rng, class, spec.words_per_text, decoy),
                    label: class.to_string(),
                    split: split.to_string(),
                });
            }
            if let Some(b) = bias {
                for k in 0..n_planted {
                    let id = format!("{split}-{class}-p{k:03}");
                    planted.entry(class.to_string()).or_default().push(id.clone());
                    records.push(WireRecord {
                        id,
                        text: planted_text(&mut rng, b, spec.words_per_text),
                        label: class.to_string(),
                        split: split.to_string(),
                    });
                }
            }
        }
    }
    PlantedCorpus { records, planted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn vocabularies_are_disjoint_and_alphabetic() {
        let mut all = HashSet::new();
        for c in CLASSES {
            for w in vocabulary(c) {
                assert!(w.chars().all(|ch| ch.is_ascii_lowercase()), "{w}");
                assert!(all.insert(*w), "duplicate {w}");
            }
        }
        for extra in ["earnings", "season", "patent"] {
            assert!(!all.contains(extra));
        }
    }

    #[test]
    fn shape_and_determinism() {
        let spec = PlantedSpec::single_bias();
        let a = planted_corpus(&spec, 3);
        assert_eq!(a, planted_corpus(&spec, 3));
        assert_ne!(a.records, planted_corpus(&spec, 4).records);
        let count = |s: &str| a.records.iter().filter(|r| r.split == s).count();
        assert_eq!((count("train"), count("validation"), count("pool")), (600, 300, 300));
        assert_eq!(a.planted["business"].len(), 55);
        for r in &a.records {
            assert_eq!(r.text.split(' ').count(), 8, "{}", r.text);
        }
        let planted_val: Vec<&WireRecord> = a
            .records
            .iter()
            .filter(|r| r.split == "validation" && r.id.contains("-p"))
            .collect();
        assert_eq!(planted_val.len(), 25);
        assert!(planted_val.iter().all(|r| r.text.contains("season")));
    }
}

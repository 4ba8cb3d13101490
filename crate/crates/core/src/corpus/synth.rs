//! Synthetic outfit images and feedback sentences.
//!
//! Every image wears one garment per body slot. A garment item (kind, color,
//! pattern) is planted as an activation pattern over its slot's block of
//! cells; blocks of different slots never overlap and all other cells carry
//! noise only. Sentences are template realizations that mention one item,
//! except for a configurable share of attribute-free generic sentences that
//! fit every image equally well.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Corpus, CorpusError, EvalSet, Example, FeatureGrid, FeedbackType, Lexicon, Pos};

#[derive(Clone, Debug, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub garments: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeInventory {
    pub slots: Vec<SlotSpec>,
    pub colors: Vec<String>,
    pub patterns: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for AttributeInventory {
    fn default() -> Self {
        Self {
            slots: vec![
                SlotSpec {
                    name: "top".into(),
                    garments: strings(&["jacket", "shirt", "sweater", "blouse", "coat"]),
                },
                SlotSpec {
                    name: "bottom".into(),
                    garments: strings(&["jeans", "skirt", "pants", "shorts", "leggings"]),
                },
                SlotSpec {
                    name: "shoes".into(),
                    garments: strings(&["boots", "sneakers", "heels", "sandals", "loafers"]),
                },
            ],
            colors: strings(&["black", "white", "red", "blue", "green", "gray", "pink", "beige"]),
            patterns: strings(&["striped", "plaid", "floral", "dotted", "checkered"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub feedback_type: FeedbackType,
    pub grid_height: usize,
    pub grid_width: usize,
    pub grid_depth: usize,
    pub num_train_images: usize,
    pub num_eval_images: usize,
    pub sentences_per_image: usize,
    pub refs_per_eval_image: usize,
    /// Fraction of sentences drawn from the generic (attribute-free) set.
    pub generic_rate: f64,
    /// Norm scale of each planted attribute vector.
    pub signal_scale: f64,
    /// Per-entry standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    pub inventory: AttributeInventory,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            feedback_type: FeedbackType::Good,
            grid_height: 7,
            grid_width: 14,
            grid_depth: 32,
            num_train_images: 2000,
            num_eval_images: 100,
            sentences_per_image: 3,
            refs_per_eval_image: 15,
            generic_rate: 0.3,
            signal_scale: 2.0,
            noise_std: 0.1,
            inventory: AttributeInventory::default(),
        }
    }
}

/// The garment worn in one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub slot: usize,
    pub garment: usize,
    pub color: usize,
    pub pattern: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Piece {
    Word(&'static str),
    Color,
    Garment,
    Pattern,
    /// A color different from the item's.
    OtherColor,
    /// A pattern different from the item's.
    OtherPattern,
    /// The garment worn in a different slot.
    OtherGarment,
}

use Piece::*;

const GOOD_GENERIC: &[&[&str]] = &[
    &["your", "outfit", "fits", "you", "well"],
    &["you", "look", "great"],
    &["nice", "outfit"],
    &["you", "look", "lovely"],
    &["love", "the", "outfit"],
];

const TIP_GENERIC: &[&[&str]] = &[
    &["add", "some", "accessories"],
    &["try", "a", "statement", "necklace"],
    &["add", "a", "belt"],
    &["add", "a", "scarf"],
    &["try", "some", "jewelry"],
];

const GOOD_TEMPLATES: &[&[Piece]] = &[
    &[Word("the"), Color, Garment, Word("looks"), Word("great"), Word("on"), Word("you")],
    &[Word("the"), Color, Garment, Word("is"), Word("a"), Word("great"), Word("choice")],
    &[Word("the"), Color, Garment, Word("fits"), Word("you"), Word("well")],
    &[Word("the"), Color, Garment, Word("goes"), Word("well"), Word("with"), Word("your"), OtherGarment],
    &[Word("the"), Color, Garment, Word("adds"), Word("a"), Word("nice"), Word("touch")],
    &[Word("the"), Color, Garment, Word("is"), Word("very"), Word("flattering")],
    &[Word("the"), Color, Garment, Word("has"), Word("a"), Word("lovely"), Pattern, Word("pattern")],
];

const TIP_TEMPLATES: &[&[Piece]] = &[
    &[Word("swap"), Word("your"), Color, Garment, Word("for"), OtherColor, Garment],
    &[Word("swap"), Word("your"), Color, Garment, Word("for"), Word("a"), OtherPattern, Word("one")],
    &[Word("try"), Word("pairing"), Word("your"), Color, Garment, Word("with"), OtherColor, OtherGarment],
    &[Word("try"), Word("a"), OtherColor, Garment, Word("instead")],
    &[Word("add"), Word("a"), OtherColor, Word("belt"), Word("to"), Word("your"), Color, Garment],
];

const FUNCTION_WORDS: &[(&str, Pos)] = &[
    ("the", Pos::Det),
    ("a", Pos::Det),
    ("an", Pos::Det),
    ("some", Pos::Det),
    ("your", Pos::Pron),
    ("my", Pos::Pron),
    ("you", Pos::Pron),
    ("i", Pos::Pron),
    ("it", Pos::Pron),
    ("looks", Pos::Verb),
    ("look", Pos::Verb),
    ("is", Pos::Verb),
    ("fits", Pos::Verb),
    ("goes", Pos::Verb),
    ("adds", Pos::Verb),
    ("has", Pos::Verb),
    ("swap", Pos::Verb),
    ("try", Pos::Verb),
    ("pairing", Pos::Verb),
    ("add", Pos::Verb),
    ("complement", Pos::Verb),
    ("love", Pos::Verb),
    ("on", Pos::Prep),
    ("with", Pos::Prep),
    ("for", Pos::Prep),
    ("to", Pos::Prep),
    ("of", Pos::Prep),
    ("and", Pos::Conj),
    ("or", Pos::Conj),
    ("but", Pos::Conj),
    ("great", Pos::Adj),
    ("nice", Pos::Adj),
    ("lovely", Pos::Adj),
    ("flattering", Pos::Adj),
    ("statement", Pos::Adj),
    ("outfit", Pos::Noun),
    ("choice", Pos::Noun),
    ("touch", Pos::Noun),
    ("pattern", Pos::Noun),
    ("one", Pos::Noun),
    ("belt", Pos::Noun),
    ("accessories", Pos::Noun),
    ("necklace", Pos::Noun),
    ("scarf", Pos::Noun),
    ("jewelry", Pos::Noun),
    ("two", Pos::Num),
    ("well", Pos::Other),
    ("very", Pos::Other),
    ("instead", Pos::Other),
    (",", Pos::Other),
];

/// POS lexicon covering every word the generator can emit for `inventory`.
pub fn synthetic_lexicon(inventory: &AttributeInventory) -> Lexicon {
    let mut lex: Lexicon = FUNCTION_WORDS
        .iter()
        .map(|&(w, p)| (w.to_owned(), p))
        .collect();
    for slot in &inventory.slots {
        for g in &slot.garments {
            lex.insert(g.clone(), Pos::Noun);
        }
    }
    for w in inventory.colors.iter().chain(&inventory.patterns) {
        lex.insert(w.clone(), Pos::Adj);
    }
    lex
}

/// True when `sentence` is one of the attribute-free generic sentences.
pub fn is_generic(sentence: &[String], feedback_type: FeedbackType) -> bool {
    generic_set(feedback_type)
        .iter()
        .any(|g| g.len() == sentence.len() && g.iter().zip(sentence).all(|(a, b)| a == b))
}

fn generic_set(t: FeedbackType) -> &'static [&'static [&'static str]] {
    match t {
        FeedbackType::Good => GOOD_GENERIC,
        FeedbackType::Tip => TIP_GENERIC,
    }
}

fn templates(t: FeedbackType) -> &'static [&'static [Piece]] {
    match t {
        FeedbackType::Good => GOOD_TEMPLATES,
        FeedbackType::Tip => TIP_TEMPLATES,
    }
}

/// Cell indices (row-major) covered by each slot's block.
pub fn slot_regions(config: &SynthConfig) -> Vec<Vec<usize>> {
    let (h, w) = (config.grid_height, config.grid_width);
    let n = config.inventory.slots.len();
    let (c0, c1) = (w / 4, w - w / 4);
    (0..n)
        .map(|s| {
            let (r0, r1) = (s * h / n, (s + 1) * h / n);
            (r0..r1)
                .flat_map(|r| (c0..c1).map(move |c| r * w + c))
                .collect()
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let inv = &self.inventory;
        if self.grid_height == 0 || self.grid_width == 0 || self.grid_depth == 0 {
            return Err(CorpusError::Config("grid dimensions must be positive".into()));
        }
        if inv.slots.is_empty() || inv.colors.is_empty() || inv.patterns.is_empty() {
            return Err(CorpusError::Config("attribute inventory has an empty category".into()));
        }
        if inv.slots.iter().any(|s| s.garments.is_empty()) {
            return Err(CorpusError::Config("a slot has no garments".into()));
        }
        if self.grid_height < inv.slots.len() || self.grid_width < 2 {
            return Err(CorpusError::Config(format!(
                "grid {}x{} too small for {} slots",
                self.grid_height,
                self.grid_width,
                inv.slots.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.generic_rate) {
            return Err(CorpusError::Config(format!(
                "generic_rate {} outside [0, 1]",
                self.generic_rate
            )));
        }
        if self.sentences_per_image == 0 {
            return Err(CorpusError::Config("sentences_per_image must be ≥ 1".into()));
        }
        if self.num_eval_images > 0 && self.refs_per_eval_image < 2 {
            return Err(CorpusError::Config("refs_per_eval_image must be ≥ 2".into()));
        }
        for tpl in templates(self.feedback_type) {
            let need = |p: Piece| tpl.contains(&p);
            if need(OtherColor) && inv.colors.len() < 2 {
                return Err(CorpusError::Config(
                    "templates need two distinct colors; inventory has fewer".into(),
                ));
            }
            if need(OtherPattern) && inv.patterns.len() < 2 {
                return Err(CorpusError::Config(
                    "templates need two distinct patterns; inventory has fewer".into(),
                ));
            }
            if need(OtherGarment) && inv.slots.len() < 2 {
                return Err(CorpusError::Config(
                    "templates need two garment slots; inventory has fewer".into(),
                ));
            }
        }
        Ok(())
    }
}

struct World {
    slot_markers: Vec<Vec<f64>>,
    garments: Vec<Vec<Vec<f64>>>,
    colors: Vec<Vec<f64>>,
    patterns: Vec<Vec<f64>>,
}

impl World {
    fn new(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.grid_depth;
        let normal = Normal::new(0.0, config.signal_scale / (d as f64).sqrt()).unwrap();
        let vec = |rng: &mut ChaCha8Rng| (0..d).map(|_| normal.sample(rng)).collect::<Vec<f64>>();
        let inv = &config.inventory;
        let slot_markers = inv.slots.iter().map(|_| vec(rng)).collect();
        let garments = inv
            .slots
            .iter()
            .map(|s| s.garments.iter().map(|_| vec(rng)).collect())
            .collect();
        let colors = inv.colors.iter().map(|_| vec(rng)).collect();
        let patterns = inv.patterns.iter().map(|_| vec(rng)).collect();
        Self {
            slot_markers,
            garments,
            colors,
            patterns,
        }
    }
}

/// Between one and all slots are worn, chosen uniformly.
fn sample_items(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Item> {
    let inv = &config.inventory;
    let n = rng.gen_range(1..=inv.slots.len());
    let mut slots = rand::seq::index::sample(rng, inv.slots.len(), n).into_vec();
    slots.sort_unstable();
    slots
        .into_iter()
        .map(|slot| Item {
            slot,
            garment: rng.gen_range(0..inv.slots[slot].garments.len()),
            color: rng.gen_range(0..inv.colors.len()),
            pattern: rng.gen_range(0..inv.patterns.len()),
        })
        .collect()
}

fn render_grid(
    config: &SynthConfig,
    world: &World,
    regions: &[Vec<usize>],
    items: &[Item],
    rng: &mut ChaCha8Rng,
) -> FeatureGrid {
    let d = config.grid_depth;
    let cells = config.grid_height * config.grid_width;
    let noise = Normal::new(0.0, config.noise_std.max(0.0)).unwrap();
    let mut values = vec![0.0f64; cells * d];
    for item in items {
        let signal: Vec<f64> = (0..d)
            .map(|k| {
                world.slot_markers[item.slot][k]
                    + world.garments[item.slot][item.garment][k]
                    + world.colors[item.color][k]
                    + world.patterns[item.pattern][k]
            })
            .collect();
        for &cell in &regions[item.slot] {
            values[cell * d..(cell + 1) * d].copy_from_slice(&signal);
        }
    }
    let values = values
        .into_iter()
        .map(|v| (v + noise.sample(rng)) as f32)
        .collect();
    FeatureGrid::new(config.grid_height, config.grid_width, d, values).expect("valid grid")
}

fn realize(
    config: &SynthConfig,
    items: &[Item],
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let inv = &config.inventory;
    if rng.gen_bool(config.generic_rate) {
        let g = generic_set(config.feedback_type).choose(rng).unwrap();
        return g.iter().map(|w| w.to_string()).collect();
    }
    // Templates naming a second garment need a second item.
    let usable: Vec<&&[Piece]> = templates(config.feedback_type)
        .iter()
        .filter(|t| items.len() > 1 || !t.contains(&OtherGarment))
        .collect();
    let tpl = usable.choose(rng).unwrap();
    let i = rng.gen_range(0..items.len());
    let item = &items[i];
    let other_color = {
        let k = rng.gen_range(0..inv.colors.len().max(2) - 1);
        if k >= item.color { k + 1 } else { k }
    };
    let other_pattern = {
        let k = rng.gen_range(0..inv.patterns.len().max(2) - 1);
        if k >= item.pattern { k + 1 } else { k }
    };
    let other_item = {
        let k = rng.gen_range(0..items.len().max(2) - 1);
        &items[if k >= i { k + 1 } else { k }.min(items.len() - 1)]
    };
    tpl.iter()
        .map(|p| match p {
            Word(w) => w.to_string(),
            Color => inv.colors[item.color].clone(),
            Garment => inv.slots[item.slot].garments[item.garment].clone(),
            Pattern => inv.patterns[item.pattern].clone(),
            OtherColor => inv.colors[other_color].clone(),
            OtherPattern => inv.patterns[other_pattern].clone(),
            OtherGarment => inv.slots[other_item.slot].garments[other_item.garment].clone(),
        })
        .collect()
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Images with their planted items; shared by both feedback types for a seed.
pub fn generate_images(config: &SynthConfig, seed: u64, eval: bool) -> Result<Vec<(FeatureGrid, Vec<Item>)>, CorpusError> {
    config.validate()?;
    let world = World::new(config, &mut stream(seed, 0));
    let regions = slot_regions(config);
    let (n, s) = if eval {
        (config.num_eval_images, 2)
    } else {
        (config.num_train_images, 1)
    };
    let mut rng = stream(seed, s);
    Ok((0..n)
        .map(|_| {
            let items = sample_items(config, &mut rng);
            let grid = render_grid(config, &world, &regions, &items, &mut rng);
            (grid, items)
        })
        .collect())
}

/// Deterministic training corpus and evaluation set for `seed`.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<(Corpus, EvalSet), CorpusError> {
    config.validate()?;
    let type_offset = match config.feedback_type {
        FeedbackType::Good => 0,
        FeedbackType::Tip => 1,
    };
    let build = |eval: bool| -> Result<Corpus, CorpusError> {
        let images = generate_images(config, seed, eval)?;
        let (per, s, prefix) = if eval {
            (config.refs_per_eval_image, 5 + type_offset, "eval")
        } else {
            (config.sentences_per_image, 3 + type_offset, "train")
        };
        let mut rng = stream(seed, s);
        let examples = images
            .into_iter()
            .enumerate()
            .map(|(i, (grid, items))| Example {
                image_id: format!("{prefix}-{i:05}"),
                feedback_type: config.feedback_type,
                grid,
                sentences: (0..per).map(|_| realize(config, &items, &mut rng)).collect(),
            })
            .collect();
        Ok(Corpus { examples })
    };
    let train = build(false)?;
    let eval = EvalSet::new(build(true)?)?;
    Ok((train, eval))
}

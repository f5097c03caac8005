#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::json;

/// Small deterministic generator for fixture content.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}

const LOCATIONS: [&str; 8] = ["foot-sole", "heel", "knee", "hand", "forearm", "toe", "sacrum", "lower-leg"];
const TYPES: [&str; 5] = ["diabetic", "pressure", "surgical", "traumatic", "venous"];
const THICKNESS: [&str; 4] = ["stage_I", "stage_II", "stage_III", "not_applicable"];
const COLORS: [&str; 4] = ["red_moist", "pink", "yellow_grey", "mixed"];
const AMOUNTS: [&str; 4] = ["none", "scant", "moderate", "copious"];
const DRAINAGE: [&str; 3] = ["serous", "serosanguinous", "purulent"];
const INFECTION: [&str; 2] = ["not_infected", "infected"];

const TITLES: [&str; 6] = [
    "Wound not healing",
    "Red skin around cut",
    "Blister on my foot",
    "Scab after surgery",
    "Ulcer question",
    "Burn from cooking",
];
const CONTENT: [&str; 8] = [
    "It has been two weeks and the area still looks wet.",
    "There is some clear fluid coming out.",
    "Should I keep it covered at night?",
    "The skin around it feels warm.",
    "I have diabetes and I am worried.",
    "What ointment should I use?",
    "It hurts when I walk.",
    "How long until it heals?",
];
const ADVICE: [&str; 8] = [
    "Clean the wound gently with saline every day.",
    "Keep the area dry and covered with a sterile dressing.",
    "Please see a doctor if redness spreads.",
    "Avoid pressure on the area.",
    "Apply a thin layer of antibiotic ointment.",
    "Healing usually takes two to three weeks.",
    "Change the dressing when it becomes wet.",
    "Control your blood sugar to support healing.",
];

fn sentences(rng: &mut Rng, pool: &[&str], n: usize) -> String {
    (0..n).map(|_| *rng.pick(pool)).collect::<Vec<_>>().join(" ")
}

/// One corpus record in the JSON-lines schema, with `n_images` image files written under `image_root`.
pub fn record(rng: &mut Rng, id: &str, n_images: usize, image_root: &Path, labeled: bool) -> serde_json::Value {
    let mut images = Vec::new();
    for i in 0..n_images {
        let rel = format!("{id}_{i}.png");
        let bytes: Vec<u8> = (0..64).map(|_| rng.next_u64() as u8).collect();
        std::fs::write(image_root.join(&rel), bytes).unwrap();
        images.push(rel);
    }
    let mut rec = json!({
        "encounter_id": id,
        "images": images,
        "query_title_en": rng.pick(&TITLES),
        "query_content_en": sentences(rng, &CONTENT, 2),
        "query_title_zh": "伤口问题",
        "query_content_zh": "伤口一直不好。",
    });
    if labeled {
        let n_refs = 1 + rng.below(3);
        let refs: Vec<String> = (0..n_refs)
            .map(|_| {
                let n = 2 + rng.below(2);
                sentences(rng, &ADVICE, n)
            })
            .collect();
        rec["reference_responses_en"] = json!(refs);
        rec["gold_attributes"] = json!({
            "anatomic_locations": [rng.pick(&LOCATIONS)],
            "wound_type": rng.pick(&TYPES),
            "wound_thickness": rng.pick(&THICKNESS),
            "tissue_color": rng.pick(&COLORS),
            "drainage_amount": rng.pick(&AMOUNTS),
            "drainage_type": rng.pick(&DRAINAGE),
            "infection": rng.pick(&INFECTION),
        });
    }
    rec
}

pub fn write_jsonl(path: &Path, records: &[serde_json::Value]) {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).unwrap());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// A temporary workspace with labeled train and test corpora plus a config file.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub train: PathBuf,
    pub test: PathBuf,
    pub images: PathBuf,
}

impl Fixture {
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        std::fs::create_dir_all(&images).unwrap();
        let mut rng = Rng::new(seed);
        let train: Vec<_> = (0..n_train)
            .map(|i| {
                let n = 1 + rng.below(3);
                record(&mut rng, &format!("train{i:03}"), n, &images, true)
            })
            .collect();
        let test: Vec<_> = (0..n_test)
            .map(|i| {
                let n = 1 + rng.below(4);
                record(&mut rng, &format!("test{i:03}"), n, &images, true)
            })
            .collect();
        let train_path = dir.path().join("train.jsonl");
        let test_path = dir.path().join("test.jsonl");
        write_jsonl(&train_path, &train);
        write_jsonl(&test_path, &test);
        Self {
            dir,
            train: train_path,
            test: test_path,
            images,
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Writes `config.toml` with the corpora wired in; `extra` is appended verbatim.
    pub fn config(&self, extra: &str) -> PathBuf {
        let text = format!(
            "[paths]\ntrain = \"train.jsonl\"\ntarget = \"test.jsonl\"\nimage_root = \"images\"\noutput_dir = \"runs\"\n\n{extra}\n"
        );
        let path = self.dir.path().join("config.toml");
        std::fs::write(&path, text).unwrap();
        path
    }
}

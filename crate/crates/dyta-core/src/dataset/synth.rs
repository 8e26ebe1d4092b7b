//! Generator for small ML-1M-format datasets: same three `::`-delimited
//! files, same invariants (years, rating range, chronological plausibility),
//! with skewed item popularity and per-user rating biases so downstream
//! statistics are non-degenerate. Used by tests and the `synth-data`
//! command wherever the real dataset is not on disk.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GENRES: &[&str] = &[
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
];

// A few Latin-1 title words so the generated movies.dat exercises the
// non-UTF-8 decoding path, just like the published file does.
const TITLE_WORDS: &[&str] = &[
    "Midnight", "Caf\u{e9}", "Voyage", "Se\u{f1}or", "Garden", "Echo", "Castle",
    "R\u{ea}ve", "Harbor", "Winter", "Signal", "Orchard", "M\u{fc}nchen", "Delta",
];

const AGE_BRACKETS: &[u8] = &[1, 18, 25, 35, 45, 50, 56];

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub users: u32,
    pub items: u32,
    pub min_ratings_per_user: u32,
    pub max_ratings_per_user: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 120,
            items: 400,
            min_ratings_per_user: 15,
            max_ratings_per_user: 40,
            seed: 7,
        }
    }
}

/// Writes users.dat, movies.dat, and ratings.dat into `dir`.
pub fn generate_ml1m(dir: &Path, config: &SynthConfig) -> std::io::Result<()> {
    assert!(config.users >= 1 && config.items >= 12, "need a non-trivial catalog");
    assert!(
        config.min_ratings_per_user >= 2
            && config.min_ratings_per_user <= config.max_ratings_per_user,
        "ratings-per-user range must allow leave-one-out"
    );
    assert!(
        config.max_ratings_per_user <= config.items,
        "cannot rate more distinct items than the catalog holds"
    );
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    write_latin1(&dir.join("users.dat"), &render_users(config, &mut rng))?;

    // Per-item quality in [2,5] drives both titles' ratings and which items
    // end up "highly rated".
    let qualities: Vec<f64> = (0..config.items).map(|_| rng.random_range(2.0..=5.0)).collect();
    write_latin1(&dir.join("movies.dat"), &render_movies(config, &mut rng))?;

    // Zipf-like popularity over item ids: weight 1/(id_rank + 3).
    let weights: Vec<f64> = (0..config.items).map(|i| 1.0 / (i as f64 + 3.0)).collect();
    let popularity = WeightedIndex::new(&weights).expect("positive weights");
    write_latin1(
        &dir.join("ratings.dat"),
        &render_ratings(config, &qualities, &popularity, &mut rng),
    )?;
    Ok(())
}

fn render_users(config: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for user_id in 1..=config.users {
        let gender = if rng.random_bool(0.5) { "M" } else { "F" };
        let age = AGE_BRACKETS[rng.random_range(0..AGE_BRACKETS.len())];
        let occupation = rng.random_range(0..=20);
        let zip = rng.random_range(10000..=99999);
        out.push_str(&format!("{user_id}::{gender}::{age}::{occupation}::{zip}\n"));
    }
    out
}

fn render_movies(config: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for item_id in 1..=config.items {
        let a = TITLE_WORDS[rng.random_range(0..TITLE_WORDS.len())];
        let b = TITLE_WORDS[rng.random_range(0..TITLE_WORDS.len())];
        let year = rng.random_range(1930..=2000);
        let mut genres = String::new();
        let count = rng.random_range(1..=3);
        let mut picked: Vec<usize> = Vec::new();
        while picked.len() < count {
            let g = rng.random_range(0..GENRES.len());
            if !picked.contains(&g) {
                picked.push(g);
            }
        }
        for (i, g) in picked.iter().enumerate() {
            if i > 0 {
                genres.push('|');
            }
            genres.push_str(GENRES[*g]);
        }
        out.push_str(&format!("{item_id}::{a} {b} #{item_id} ({year})::{genres}\n"));
    }
    out
}

fn render_ratings(
    config: &SynthConfig,
    qualities: &[f64],
    popularity: &WeightedIndex<f64>,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut out = String::new();
    for user_id in 1..=config.users {
        let count =
            rng.random_range(config.min_ratings_per_user..=config.max_ratings_per_user) as usize;
        let mut items: Vec<u32> = Vec::with_capacity(count);
        while items.len() < count {
            let item = popularity.sample(rng) as u32 + 1;
            if !items.contains(&item) {
                items.push(item);
            }
        }
        let generosity: f64 = rng.random_range(-0.7..=0.7);
        let mut timestamp: i64 = 978_000_000 + (user_id as i64) * 7_919;
        for item in items {
            let noise: f64 = rng.random_range(-1.0..=1.0);
            let rating = (qualities[(item - 1) as usize] + generosity + noise).round();
            let rating = rating.clamp(1.0, 5.0) as u8;
            out.push_str(&format!("{user_id}::{item}::{rating}::{timestamp}\n"));
            // Mostly strictly increasing timestamps with occasional ties to
            // exercise the stable tie rule.
            if !rng.random_bool(0.1) {
                timestamp += rng.random_range(60..=86_400);
            }
        }
    }
    out
}

/// Encodes the string as Latin-1 bytes; the generator only emits code
/// points below U+0100.
fn write_latin1(path: &Path, text: &str) -> std::io::Result<()> {
    let bytes: Vec<u8> = text
        .chars()
        .map(|c| {
            let code = c as u32;
            debug_assert!(code < 0x100, "generator emitted non-Latin-1 char {c:?}");
            code as u8
        })
        .collect();
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)
}

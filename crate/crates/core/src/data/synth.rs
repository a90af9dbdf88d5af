use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DataError;
use crate::config::TrackName;

/// 36 symbols; with the pad token the vocabulary is 37.
pub const SMILES_ALPHABET: &str = "CNOSPFIBcnosplrH()[]=#+-@/\\.12345678";
/// 23 residue codes (20 standard plus X, B, Z); with padding, 24.
pub const PROTEIN_ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWYXBZ";

/// `n` lines of synthetic text for a track, deterministic in `seed`.
pub fn generate_synthetic_corpus(kind: TrackName, n: usize, seed: u64) -> Result<String, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    match kind {
        TrackName::SmilesLike => {
            for _ in 0..n {
                out.push_str(&smiles_line(&mut rng));
                out.push('\n');
            }
        }
        TrackName::ProteinLike => {
            let chain = MarkovChain::new(PROTEIN_ALPHABET, 0x5eed_0001);
            for _ in 0..n {
                let len = rng.random_range(40..=160);
                out.push_str(&chain.sample(len, &mut rng));
                out.push('\n');
            }
        }
        TrackName::NlpLike => {
            for _ in 0..n {
                let sentences = rng.random_range(1..=3);
                let line: Vec<String> = (0..sentences).map(|_| sentence(&mut rng)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        TrackName::Custom => return Err(DataError::NoSynthetic(kind)),
    }
    Ok(out)
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

const ORGANIC: &[&str] = &["C", "C", "C", "C", "c", "c", "c", "N", "n", "O", "o", "S", "s", "P", "p", "F", "Cl", "Br", "I", "B"];
const BRACKET: &[&str] = &["[nH]", "[C@H]", "[C@@H]", "[NH+]", "[O-]", "[N+]", "[S@]", "[NH2+]"];
const BONDS: &[&str] = &["=", "#", "/", "\\"];

struct SmilesState {
    open_rings: Vec<u8>,
    budget: i32,
}

fn smiles_line<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    let fragments = if rng.random_bool(0.1) { 2 } else { 1 };
    for f in 0..fragments {
        if f > 0 {
            s.push('.');
        }
        let mut st = SmilesState { open_rings: Vec::new(), budget: rng.random_range(8..=40) };
        smiles_chain(rng, &mut s, &mut st, 0);
        while let Some(d) = st.open_rings.pop() {
            s.push_str(pick(rng, ORGANIC));
            s.push((b'0' + d) as char);
        }
    }
    s
}

fn smiles_chain<R: Rng>(rng: &mut R, s: &mut String, st: &mut SmilesState, depth: usize) {
    let len = rng.random_range(1..=6);
    for i in 0..len {
        if st.budget <= 0 {
            break;
        }
        if i > 0 && rng.random_bool(0.15) {
            s.push_str(pick(rng, BONDS));
        }
        if rng.random_bool(0.08) {
            s.push_str(pick(rng, BRACKET));
        } else {
            s.push_str(pick(rng, ORGANIC));
        }
        st.budget -= 1;
        if rng.random_bool(0.12) && st.open_rings.len() < 3 {
            let d = (1..=8u8).find(|d| !st.open_rings.contains(d)).unwrap_or(1);
            st.open_rings.push(d);
            s.push((b'0' + d) as char);
        } else if !st.open_rings.is_empty() && rng.random_bool(0.25) {
            let d = st.open_rings.pop().unwrap_or(1);
            s.push((b'0' + d) as char);
        }
        if depth < 3 && st.budget > 2 && rng.random_bool(0.2) {
            s.push('(');
            smiles_chain(rng, s, st, depth + 1);
            s.push(')');
        }
    }
}

/// First-order Markov chain over an alphabet with a fixed, peaked transition table.
struct MarkovChain {
    symbols: Vec<char>,
    cumulative: Vec<Vec<f64>>,
}

impl MarkovChain {
    fn new(alphabet: &str, table_seed: u64) -> Self {
        let symbols: Vec<char> = alphabet.chars().collect();
        let k = symbols.len();
        let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
        let cumulative = (0..k)
            .map(|_| {
                let w: Vec<f64> = (0..k)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        // ambiguity codes (last three) are rare
                        let rare = if j >= k - 3 { -3.0 } else { 0.0 };
                        (1.6 * z + rare).exp()
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                w.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x / total;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Self { symbols, cumulative }
    }

    fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> String {
        let mut state = rng.random_range(0..self.symbols.len() - 3);
        let mut out = String::with_capacity(len);
        out.push(self.symbols[state]);
        for _ in 1..len {
            let u: f64 = rng.random();
            let row = &self.cumulative[state];
            state = row.iter().position(|&c| u < c).unwrap_or(row.len() - 1);
            out.push(self.symbols[state]);
        }
        out
    }
}

const DET: &[&str] = &["the", "a", "this", "every", "one"];
const ADJ: &[&str] = &["small", "bright", "quiet", "old", "curious", "green", "heavy", "clever", "slow", "warm"];
const NOUN: &[&str] = &[
    "student", "river", "teacher", "garden", "machine", "city", "book", "market", "scientist", "village",
    "engine", "forest", "child", "museum", "planet",
];
const VERB: &[&str] = &["sees", "builds", "finds", "reads", "moves", "follows", "studies", "visits", "paints", "carries"];
const ADV: &[&str] = &["quickly", "often", "carefully", "never", "together", "again"];
const PREP: &[&str] = &["near", "under", "beyond", "inside", "across"];

fn sentence<R: Rng>(rng: &mut R) -> String {
    let words: Vec<&str> = match rng.random_range(0..4) {
        0 => vec![pick(rng, DET), pick(rng, ADJ), pick(rng, NOUN), pick(rng, VERB), pick(rng, DET), pick(rng, NOUN)],
        1 => vec![pick(rng, DET), pick(rng, NOUN), pick(rng, VERB), pick(rng, PREP), pick(rng, DET), pick(rng, ADJ), pick(rng, NOUN)],
        2 => vec![pick(rng, DET), pick(rng, NOUN), "and", pick(rng, DET), pick(rng, NOUN), pick(rng, ADV), pick(rng, VERB), pick(rng, DET), pick(rng, NOUN)],
        _ => vec![pick(rng, DET), pick(rng, ADJ), pick(rng, NOUN), pick(rng, ADV), pick(rng, VERB), pick(rng, PREP), pick(rng, DET), pick(rng, NOUN)],
    };
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s.push('.');
    s
}

//! Seeded problem generators for the three benchmark domains. Every case
//! carries a shortest plan as its solvability certificate.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atom::{Atom, State};
use crate::domain::{Domain, Problem};
use crate::fixtures;
use crate::plan::Plan;
use crate::planner::reference_plan;

use super::DomainId;

pub const INGREDIENTS: [&str; 6] = [
    "carrots",
    "raisins",
    "mushrooms",
    "granola",
    "macadamias",
    "green-vegetables",
];

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkCase {
    pub domain_id: DomainId,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(skip)]
    pub problem: Problem,
    /// A shortest plan; its existence certifies the case.
    pub reference: Plan,
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Draws attempts from the seeded stream until one is certified.
fn certified(
    domain_id: DomainId,
    n: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<Problem>,
) -> BenchmarkCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let Some(problem) = draw(&mut rng) else {
            continue;
        };
        match reference_plan(&problem) {
            Ok(reference) => {
                return BenchmarkCase {
                    domain_id,
                    n,
                    seed,
                    problem,
                    reference,
                }
            }
            Err(e) => log::debug!("{domain_id} N={n} seed={seed}: redrawing ({e})"),
        }
    }
}

fn problem(name: String, domain: &Arc<Domain>, init: State, goal: State) -> Option<Problem> {
    if goal.iter().all(|g| init.contains(g)) {
        return None;
    }
    Problem::new(name, domain.clone(), init, goal).ok()
}

/// N balls over four rooms; every ball starts away from its goal room.
pub fn gen_ballmoving(n: usize, seed: u64) -> BenchmarkCase {
    assert!(n >= 1, "at least one ball");
    let rooms = numbered("room", 4);
    let balls = numbered("ball", n);
    let mut objects = vec!["robot1".to_string()];
    objects.extend(rooms.iter().cloned());
    objects.extend(balls.iter().cloned());
    let domain = Arc::new(fixtures::ballmoving().with_objects(objects));
    certified(DomainId::Ballmoving, n, seed, |rng| {
        let mut init = State::new();
        let mut goal = State::new();
        init.insert(Atom::new("robot-at", ["robot1", rooms.choose(rng).unwrap().as_str()]));
        for b in &balls {
            let target = rooms.choose(rng).unwrap();
            let others: Vec<&String> = rooms.iter().filter(|r| *r != target).collect();
            let start = others.choose(rng).unwrap();
            init.insert(Atom::new("at", [b.as_str(), start.as_str()]));
            goal.insert(Atom::new("at", [b.as_str(), target.as_str()]));
        }
        problem(format!("ballmoving-{n}-{seed}"), &domain, init, goal)
    })
}

/// Unsigned Lah numbers L(n, k): ways to split n labelled blocks into k
/// unlabelled non-empty towers.
fn lah(n: usize, k: usize) -> f64 {
    if k == 0 || k > n {
        return if n == 0 && k == 0 { 1.0 } else { 0.0 };
    }
    let binom = |a: usize, b: usize| (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64);
    let fact = |m: usize| (1..=m).fold(1.0, |acc, i| acc * i as f64);
    binom(n - 1, k - 1) * fact(n) / fact(k)
}

/// A uniformly random block configuration, as towers listed bottom first.
fn random_towers(blocks: &[String], rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let n = blocks.len();
    let weights: Vec<f64> = (1..=n).map(|k| lah(n, k)).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut k = n;
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            k = i + 1;
            break;
        }
        pick -= w;
    }
    let mut order = blocks.to_vec();
    order.shuffle(rng);
    let mut gaps: Vec<usize> = (1..n).collect();
    gaps.shuffle(rng);
    let mut cuts: Vec<usize> = gaps[..k - 1].to_vec();
    cuts.sort_unstable();
    let mut towers = Vec::with_capacity(k);
    let mut from = 0;
    for c in cuts.into_iter().chain([n]) {
        towers.push(order[from..c].to_vec());
        from = c;
    }
    towers
}

fn layout_atoms(towers: &[Vec<String>], with_clear: bool) -> State {
    let mut s = State::new();
    for t in towers {
        s.insert(Atom::new("ontable", [t[0].as_str()]));
        for w in t.windows(2) {
            s.insert(Atom::new("on", [w[1].as_str(), w[0].as_str()]));
        }
        if with_clear {
            s.insert(Atom::new("clear", [t[t.len() - 1].as_str()]));
        }
    }
    s
}

/// N blocks in a random configuration, to be rearranged into another.
/// A single block has only one configuration, so N starts at 2.
pub fn gen_blocksworld(n: usize, seed: u64) -> BenchmarkCase {
    assert!(n >= 2, "at least two blocks");
    let blocks = numbered("b", n);
    let domain = Arc::new(fixtures::blocksworld().with_objects(blocks.clone()));
    certified(DomainId::Blocksworld, n, seed, |rng| {
        let mut init = layout_atoms(&random_towers(&blocks, rng), true);
        init.insert(Atom::new("arm-empty", Vec::<String>::new()));
        let goal = layout_atoms(&random_towers(&blocks, rng), false);
        problem(format!("blocksworld-{n}-{seed}"), &domain, init, goal)
    })
}

/// N pots, each receiving one to five of the six ingredients.
pub fn gen_cooking(n: usize, seed: u64) -> BenchmarkCase {
    assert!(n >= 1, "at least one pot");
    let pots = numbered("pot", n);
    let mut objects: Vec<String> = INGREDIENTS.iter().map(|s| s.to_string()).collect();
    objects.extend(pots.iter().cloned());
    let domain = Arc::new(fixtures::cooking().with_objects(objects));
    certified(DomainId::Cooking, n, seed, |rng| {
        let mut init = State::new();
        init.insert(Atom::new("arm-free", Vec::<String>::new()));
        for i in INGREDIENTS {
            init.insert(Atom::new("available", [i]));
        }
        let mut goal = State::new();
        goal.insert(Atom::new("arm-free", Vec::<String>::new()));
        for pot in &pots {
            let k = rng.gen_range(1..=5);
            for i in INGREDIENTS.choose_multiple(rng, k) {
                goal.insert(Atom::new("in", [*i, pot.as_str()]));
            }
        }
        problem(format!("cooking-{n}-{seed}"), &domain, init, goal)
    })
}

/// Smallest N with a non-trivial instance.
pub fn min_n(domain: DomainId) -> usize {
    match domain {
        DomainId::Blocksworld => 2,
        _ => 1,
    }
}

pub fn gen_case(domain: DomainId, n: usize, seed: u64) -> BenchmarkCase {
    match domain {
        DomainId::Ballmoving => gen_ballmoving(n, seed),
        DomainId::Blocksworld => gen_blocksworld(n, seed),
        DomainId::Cooking => gen_cooking(n, seed),
    }
}

#![allow(dead_code)]

use gridforge::model::{Dgu, DguId, DguParams, FilterParams, LineParams, LoadModel, MicrogridTopology};
use gridforge::sweep::GREEN_BOX;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Converter constants drawn uniformly from the green box.
pub fn green_filter(rng: &mut ChaCha8Rng) -> FilterParams {
    let b = GREEN_BOX;
    FilterParams {
        r_t: uniform(rng, b.r_t.min, b.r_t.max),
        l_t: uniform(rng, b.l_t.min, b.l_t.max),
        c_t: uniform(rng, b.c_t.min, b.c_t.max),
    }
}

pub fn green_dgu(rng: &mut ChaCha8Rng, id: u32) -> Dgu {
    let f = green_filter(rng);
    Dgu {
        id: DguId(id),
        params: DguParams {
            r_t: f.r_t,
            l_t: f.l_t,
            c_t: f.c_t,
            load: LoadModel::Resistive(uniform(rng, 2.0, 20.0)),
            v_ref: 48.0 * uniform(rng, 0.997, 1.003),
        },
    }
}

/// Random spanning tree plus a few chords, so the graph is always connected.
pub fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> MicrogridTopology {
    let dgus: Vec<Dgu> = (1..=n as u32).map(|id| green_dgu(rng, id)).collect();
    let mut lines = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for k in 1..n {
        let parent = rng.gen_range(0..k);
        used.insert((parent, k));
        lines.push(line(rng, parent, k));
    }
    for _ in 0..rng.gen_range(0..=n / 2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && used.insert(key) {
            lines.push(line(rng, key.0, key.1));
        }
    }
    MicrogridTopology::new(dgus, lines).expect("generated topology is valid")
}

fn line(rng: &mut ChaCha8Rng, a: usize, b: usize) -> LineParams {
    LineParams::new(DguId(a as u32 + 1), DguId(b as u32 + 1), uniform(rng, 0.02, 0.1))
        .with_inductance(uniform(rng, 1e-6, 3e-6))
}

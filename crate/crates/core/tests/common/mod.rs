#![allow(dead_code)]

use std::path::PathBuf;

use minerr::cli::{
    load_scenario, AFile, DeltaFile, Dims, GainsFile, InitFile, ScenarioFile, SimFile,
};
use minerr::model::Scenario;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn example_path() -> PathBuf {
    repo_root().join("scenarios/paper_example.json")
}

pub fn example_file() -> ScenarioFile {
    ScenarioFile::load(&example_path()).expect("example scenario loads")
}

pub fn example() -> Scenario {
    load_scenario(&example_path()).expect("example scenario is valid")
}

pub fn lit(x: f64) -> String {
    if x < 0.0 {
        format!("({x:?})")
    } else {
        format!("{x:?}")
    }
}

/// Options for [`random_scenario`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_n: usize,
    pub phi: usize,
    /// Output-dependent nonlinearity in β (cancels in the error dynamics).
    pub nonlinear_beta: bool,
    /// Time-varying disturbance inside constant bounds.
    pub disturbance: bool,
    /// Bounds follow the disturbance, `δ̄ − δ` and `δ − δ̲` constant.
    pub constant_gap: bool,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            max_n: 4,
            phi: 2,
            nonlinear_beta: true,
            disturbance: true,
            constant_gap: false,
        }
    }
}

/// A random well-posed scenario with `C = [I_p 0]`.
///
/// Closed loops `A + L_k C` are Metzler and strictly row-diagonally dominant,
/// so `v = 𝟙` witnesses stability for every gain.
pub fn random_scenario(rng: &mut ChaCha8Rng, spec: RandomSpec) -> ScenarioFile {
    let n = rng.gen_range(1..=spec.max_n);
    let p = rng.gen_range(1..=n);
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            *e = if j < p {
                round3(rng.gen_range(-1.0..1.0))
            } else {
                round3(rng.gen_range(0.0..0.8))
            };
        }
    }
    // keep the open-loop plant bounded as well; gains may raise entries in
    // the first p columns up to 0.6
    for i in 0..n {
        let off: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                if j < p {
                    a[i][j].abs().max(0.6)
                } else {
                    a[i][j]
                }
            })
            .sum();
        a[i][i] = round3(-off - rng.gen_range(0.1..2.0));
    }

    let gain = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        let mut l = vec![vec![0.0; p]; n];
        let mut closed_off = vec![0.0; n];
        for i in 0..n {
            for j in 0..p {
                if i != j {
                    let target = round3(rng.gen_range(0.0..0.6));
                    l[i][j] = target - a[i][j];
                }
            }
            closed_off[i] = (0..n)
                .filter(|&j| j != i)
                .map(|j| if j < p { a[i][j] + l[i][j] } else { a[i][j] })
                .sum();
        }
        for i in 0..p {
            let diag = round3(-closed_off[i] - rng.gen_range(0.3..2.0));
            l[i][i] = diag - a[i][i];
        }
        l
    };
    let upper: Vec<_> = (0..spec.phi).map(|_| gain(rng)).collect();
    let lower: Vec<_> = (0..spec.phi).map(|_| gain(rng)).collect();

    let mut c = vec![vec![0.0; n]; p];
    for (j, row) in c.iter_mut().enumerate() {
        row[j] = 1.0;
    }

    let beta = (0..n)
        .map(|i| {
            if spec.nonlinear_beta && i < p {
                format!("{}*sin(y{})", lit(round3(rng.gen_range(-1.0..1.0))), i + 1)
            } else {
                "0".to_string()
            }
        })
        .collect();

    let (mut truth, mut hi, mut lo) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        if spec.disturbance {
            let up = round3(rng.gen_range(0.2..1.5));
            let down = round3(rng.gen_range(0.2..1.5));
            let mid = (up - down) / 2.0;
            let amp = round3((up + down) / 2.0 * rng.gen_range(0.1..0.9));
            let w = round3(rng.gen_range(0.2..3.0));
            let signal = format!("{} + {}*sin({}*t)", lit(mid), lit(amp), lit(w));
            if spec.constant_gap {
                hi.push(format!("{signal} + {}", lit(up)));
                lo.push(format!("{signal} - {}", lit(down)));
            } else {
                hi.push(lit(up));
                lo.push(lit(-down));
            }
            truth.push(signal);
        } else {
            truth.push("0".into());
            hi.push("0".into());
            lo.push("0".into());
        }
    }

    let x0: Vec<f64> = (0..n).map(|_| round3(rng.gen_range(-3.0..3.0))).collect();
    let xbar0 = x0
        .iter()
        .map(|x| x + round3(rng.gen_range(0.0..2.0)))
        .collect();
    let xlower0 = x0
        .iter()
        .map(|x| x - round3(rng.gen_range(0.0..2.0)))
        .collect();

    ScenarioFile {
        description: None,
        dims: Dims { n, p, q: 0 },
        c,
        a: AFile {
            constant: a,
            y_terms: vec![],
        },
        beta,
        u: vec![],
        delta: DeltaFile {
            truth,
            upper: hi,
            lower: lo,
        },
        gains: GainsFile { upper, lower },
        init: InitFile { x0, xbar0, xlower0 },
        transform: None,
        sim: SimFile {
            dt: 0.01,
            t_end: 10.0,
            record_stride: 10,
            divergence_threshold: None,
        },
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use effalign::objective::TrainingSet;
use effalign::surrogate::{generate_population, EffectDesign, Sampling, SyntheticOracle, SyntheticSpec};
use effalign::{AttributeSchema, Dataset, Question, ResponseModel};

pub fn likert_questions(n: usize, k: usize, topics: usize) -> Vec<Question> {
    (0..n)
        .map(|i| Question {
            id: format!("Q{}", i + 1),
            topic: format!("topic{}", i % topics + 1),
            prompt_text: format!("Item {}?", i + 1),
            options: (1..=k).map(|o| format!("Option {o}")).collect(),
        })
        .collect()
}

pub fn population(
    questions: usize,
    k: usize,
    countries: &[&str],
    cell_size: usize,
    seed: u64,
    sampling: Sampling,
) -> (SyntheticSpec, Dataset, SyntheticOracle) {
    let mut spec = SyntheticSpec::random(
        &AttributeSchema::default(),
        likert_questions(questions, k, 3),
        countries.iter().map(|c| c.to_string()).collect(),
        EffectDesign::default(),
        cell_size,
        seed,
    )
    .unwrap();
    spec.sampling = sampling;
    let (data, oracle) = generate_population(&spec).unwrap();
    (spec, data, oracle)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---- minimum-cost transport on the line, by dense two-phase simplex ----

const PIVOT_TOL: f64 = 1e-12;

/// Runs the simplex method on `t` (rows = constraints, last column = rhs)
/// minimizing `cost`; columns with `allowed[j] == false` never enter.
/// Bland's rule keeps it from cycling.
fn simplex(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: &[bool]) {
    let cols = cost.len();
    loop {
        let mut entering = None;
        for j in 0..cols {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let reduced = cost[j] - (0..t.len()).map(|r| cost[basis[r]] * t[r][j]).sum::<f64>();
            if reduced < -PIVOT_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { return };
        let mut leaving: Option<(usize, f64)> = None;
        for r in 0..t.len() {
            if t[r][e] > PIVOT_TOL {
                let ratio = t[r][cols] / t[r][e];
                match leaving {
                    Some((_, best)) if ratio > best + PIVOT_TOL => {}
                    Some((lr, best)) if (ratio - best).abs() <= PIVOT_TOL && basis[r] > basis[lr] => {}
                    _ => leaving = Some((r, ratio)),
                }
            }
        }
        let (r, _) = leaving.expect("transport problems are bounded");
        pivot(t, basis, r, e);
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, e: usize) {
    let p = t[r][e];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    for i in 0..t.len() {
        if i != r && t[i][e] != 0.0 {
            let f = t[i][e];
            let row_r = t[r].clone();
            for (v, rv) in t[i].iter_mut().zip(&row_r) {
                *v -= f * rv;
            }
        }
    }
    basis[r] = e;
}

/// Cheapest way to move mass `a` onto `b` when moving one unit from option
/// `i` to option `j` costs `|i - j|`.
pub fn transport_cost(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    let n = k * k;
    let m = 2 * k;
    let cols = n + m;
    let mut t = vec![vec![0.0; cols + 1]; m];
    for i in 0..k {
        for j in 0..k {
            t[i][i * k + j] = 1.0;
            t[k + j][i * k + j] = 1.0;
        }
    }
    for r in 0..m {
        t[r][n + r] = 1.0;
        t[r][cols] = if r < k { a[r] } else { b[r - k] };
    }
    let mut basis: Vec<usize> = (n..cols).collect();
    let phase1: Vec<f64> = (0..cols).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    simplex(&mut t, &mut basis, &phase1, &vec![true; cols]);
    // Drive zero-level artificials out where a real column can replace them.
    for r in 0..m {
        if basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| t[r][j].abs() > 1e-9 && !basis.contains(&j)) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }
    let cost: Vec<f64> =
        (0..cols).map(|j| if j < n { ((j / k) as f64 - (j % k) as f64).abs() } else { 0.0 }).collect();
    let allowed: Vec<bool> = (0..cols).map(|j| j < n).collect();
    simplex(&mut t, &mut basis, &cost, &allowed);
    (0..m).map(|r| cost[basis[r]] * t[r][cols]).sum()
}

// ---- direct CDF distance ----

/// Mean absolute difference of the cumulative shifts, summed from scratch at every level.
pub fn direct_cdf_distance(model: &[f64], data: &[f64]) -> f64 {
    let k = model.len();
    let mut total = 0.0;
    for level in 0..k {
        let mut m = 0.0;
        let mut d = 0.0;
        for i in 0..=level {
            m += model[i];
            d += data[i];
        }
        total += (m - d).abs();
    }
    total / k as f64
}

// ---- smoothed objective for finite differences ----

/// `alpha * mean(-ln p[mode]) + beta * mean_ctx (1/K) sum sqrt(delta^2 + eps^2)`,
/// written directly against model predictions.
pub fn reference_objective<M: ResponseModel>(model: &M, set: &TrainingSet, alpha: f64, beta: f64, eps: f64) -> f64 {
    let mut anchor = 0.0;
    let mut ce = 0.0;
    for t in set.targets() {
        let q = &t.context.question_id;
        let p1 = model.predict(&t.treated, q).unwrap();
        let p0 = model.predict(&t.untreated, q).unwrap();
        anchor -= p1.probs()[t.treated_mode - 1].max(1e-12).ln();
        anchor -= p0.probs()[t.untreated_mode - 1].max(1e-12).ln();
        let k = p1.len();
        let mut sum = 0.0;
        for level in 0..k {
            let mut delta = 0.0;
            for i in 0..=level {
                delta += p1.probs()[i] - p0.probs()[i] - t.data_effect.values()[i];
            }
            sum += (delta * delta + eps * eps).sqrt();
        }
        ce += sum / k as f64;
    }
    let n = set.len() as f64;
    alpha * anchor / (2.0 * n) + beta * ce / n
}

// ---- HTTP mock scoring server ----

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

/// Serves `handler(request_body) -> (status, response_body)` on a loopback port.
/// Each connection carries one request and is closed after the response.
pub fn spawn_server<F>(handler: F) -> MockServer
where
    F: Fn(&[u8]) -> (u16, Vec<u8>) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let handler = Arc::new(handler);
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0u8; length];
                reader.read_exact(&mut body).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let (status, response) = handler(&body);
                let head = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                    response.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(&response);
                let _ = stream.flush();
            });
        }
    });
    MockServer { url, hits }
}

#[derive(serde::Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
}

pub fn wire_response(log_likelihoods: &[f64]) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "log_likelihoods": log_likelihoods })).unwrap()
}

/// Numerically plain softmax, for closed-form expectations.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

//! Reference implementations and fixtures shared by the integration tests.
//! The oracles are written from the definitions, not from the library code.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use slicelens::pipeline::{BackendOverride, ConfigLayers, Pipeline, RunConfig, RunReport};
use slicelens::synthetic::{planted_corpus, PlantedSpec};

// ---------- Ward ----------

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for &m in members {
        for (k, x) in points[m].iter().enumerate() {
            c[k] += x;
        }
    }
    c.iter_mut().for_each(|x| *x /= members.len() as f64);
    c
}

/// Ward distance from the definition: sqrt(2 |A| |B| / (|A| + |B|)) times
/// the distance between centroids.
pub fn ward_distance(points: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let (ca, cb) = (centroid(points, a), centroid(points, b));
    let dist2: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    (2.0 * na * nb / (na + nb) * dist2).sqrt()
}

/// Naive agglomeration: evaluate every pairwise Ward distance from the
/// cluster centroids at each step and merge the closest pair while it is
/// within the threshold. Centroids are recomputed from the members.
pub fn naive_ward(points: &[Vec<f64>], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut centroids: Vec<Vec<f64>> = points.to_vec();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let dist2: f64 = centroids[i]
                    .iter()
                    .zip(&centroids[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                let (na, nb) = (clusters[i].len() as f64, clusters[j].len() as f64);
                let d = (2.0 * na * nb / (na + nb) * dist2).sqrt();
                if best.is_none_or(|(b, _, _)| d < b) {
                    best = Some((d, i, j));
                }
            }
        }
        match best {
            Some((d, i, j)) if d <= threshold => {
                let moved = clusters.remove(j);
                centroids.remove(j);
                clusters[i].extend(moved);
                centroids[i] = centroid(points, &clusters[i]);
            }
            _ => break,
        }
    }
    clusters.into_iter().map(|c| c.into_iter().collect()).collect()
}

pub fn as_partition(parts: &[Vec<usize>]) -> BTreeSet<BTreeSet<usize>> {
    parts.iter().map(|p| p.iter().copied().collect()).collect()
}

// ---------- Student t ----------

/// Lanczos approximation (g = 7, n = 9) of ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn t_log_norm(nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln()
}

fn t_density_with(ln_c: f64, x: f64, nu: f64) -> f64 {
    (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp()
}

pub fn t_density(x: f64, nu: f64) -> f64 {
    t_density_with(t_log_norm(nu), x, nu)
}

/// Two-sided tail probability by composite Simpson integration of the
/// density over [0, |t|].
pub fn t_two_sided_p(t: f64, nu: f64) -> f64 {
    let b = t.abs();
    if b == 0.0 {
        return 1.0;
    }
    let ln_c = t_log_norm(nu);
    let f = |x: f64| t_density_with(ln_c, x, nu);
    let n = 200_000usize;
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    (1.0 - 2.0 * s * h / 3.0).clamp(0.0, 1.0)
}

/// Paired t-test written out by hand, using the Simpson tail.
pub fn paired_p_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    t_two_sided_p(mean / (sd / n.sqrt()), n - 1.0)
}

// ---------- hashing ----------

/// Signed hashing of lowercased alphanumeric runs into `dim` buckets with
/// 64-bit FNV-1a, then L2 normalisation.
pub fn hash_embedding_oracle(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    let mut token = String::new();
    let mut tokens = Vec::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            token.push(ch);
        } else if !token.is_empty() {
            tokens.push(std::mem::take(&mut token));
        }
    }
    if !token.is_empty() {
        tokens.push(token);
    }
    for t in tokens {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in t.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let sign = if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

// ---------- HTTP stub ----------

#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Serves one scripted response per connection, in order, then stops.
pub struct HttpStub {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
    handle: Option<JoinHandle<()>>,
}

pub type Responder = Box<dyn Fn(&Captured) -> (u16, String) + Send>;

impl HttpStub {
    pub fn scripted(responses: Vec<(u16, String)>) -> Self {
        let mut queue = responses.into_iter();
        let n = queue.len();
        let responders: Vec<Responder> = (0..n)
            .map(|_| {
                let (status, body) = queue.next().expect("one per slot");
                Box::new(move |_: &Captured| (status, body.clone())) as Responder
            })
            .collect();
        Self::with(responders)
    }

    pub fn with(responders: Vec<Responder>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handle = std::thread::spawn(move || {
            for responder in responders {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let mut len = 0usize;
                let mut authorization = None;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (k, v) = h.split_once(':').unwrap_or((h, ""));
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => authorization = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let captured = Captured {
                    path,
                    authorization,
                    body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                };
                let (status, text) = responder(&captured);
                log.lock().unwrap().push(captured);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.flush();
            }
        });
        Self {
            url,
            requests,
            handle: Some(handle),
        }
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }

    /// Waits for the scripted connections to be served.
    pub fn join(mut self) -> Vec<Captured> {
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
        self.captured()
    }
}

// ---------- pipeline fixtures ----------

pub fn write_planted(dir: &Path, spec: &PlantedSpec, seed: u64) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("planted.jsonl");
    std::fs::write(&path, planted_corpus(spec, seed).to_jsonl()).unwrap();
    path
}

/// Mock-backend config on a planted corpus, with extra `KEY=VALUE` overrides.
pub fn mock_config(data: &Path, seed: u64, sets: &[&str]) -> RunConfig {
    let mut all = vec![format!("dataset.path=\"{}\"", data.display())];
    all.extend(sets.iter().map(|s| s.to_string()));
    RunConfig::resolve(&ConfigLayers {
        file: None,
        sets: all,
        seed: Some(seed),
        mock_backends: true,
    })
    .unwrap()
}

pub fn run_pipeline(config: RunConfig, dir: &Path) -> RunReport {
    Pipeline::new(config, Some(dir.to_path_buf()), BackendOverride::FromConfig)
        .unwrap()
        .run()
        .unwrap()
}

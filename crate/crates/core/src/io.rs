//! On-disk formats: the dense TSV network file, membership and response CSVs,
//! and the JSON parameter document.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockParams, ModelParams, NoiseParams};
use crate::network::{num_pairs, MultilayerNetwork};
use crate::transform::{Response, ResponseLayer, ResponseMatrix};

const NET_MAGIC: &str = "#sbanm-net v1";

/// 17 significant digits; parses back to the identical f64.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn network_to_string(net: &MultilayerNetwork) -> String {
    let mut out = String::with_capacity(net.num_pairs() * (8 + 24 * net.num_layers()));
    let _ = writeln!(out, "{NET_MAGIC} n={} K={}", net.num_nodes(), net.num_layers());
    for (i, j, w) in net.pairs() {
        let _ = write!(out, "{i}\t{j}");
        for v in w {
            out.push('\t');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let rest = line
        .strip_prefix(NET_MAGIC)
        .ok_or_else(|| Error::parse(1, format!("malformed header, expected `{NET_MAGIC} n=<n> K=<K>`")))?;
    let mut n = None;
    let mut k = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("K=") {
            k = v.parse::<usize>().ok();
        } else {
            return Err(Error::parse(1, format!("malformed header token `{tok}`")));
        }
    }
    match (n, k) {
        (Some(n), Some(k)) if n >= 2 && k >= 1 => Ok((n, k)),
        _ => Err(Error::parse(1, "malformed header, need n>=2 and K>=1")),
    }
}

pub fn parse_network(text: &str) -> Result<MultilayerNetwork> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty network file"))?;
    let (n, k) = parse_header(header.trim_end())?;
    let total = num_pairs(n);
    let mut weights = Vec::with_capacity(total * k);
    let (mut ei, mut ej) = (0usize, 1usize);
    let mut seen = 0usize;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        if seen == total {
            return Err(Error::parse(lineno, "more pair lines than n(n-1)/2"));
        }
        let mut fields = line.split('\t');
        let i: usize = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(lineno, "bad node index i"))?;
        let j: usize = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(lineno, "bad node index j"))?;
        if (i, j) != (ei, ej) {
            return Err(Error::parse(
                lineno,
                format!("incomplete dense pair list: expected pair ({ei},{ej}), found ({i},{j})"),
            ));
        }
        let mut count = 0;
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad weight `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, "non-finite weight"));
            }
            weights.push(v);
            count += 1;
        }
        if count != k {
            return Err(Error::parse(lineno, format!("expected {k} weights, found {count}")));
        }
        seen += 1;
        ej += 1;
        if ej == n {
            ei += 1;
            ej = ei + 1;
        }
    }
    if seen != total {
        return Err(Error::parse(
            text.lines().count() + 1,
            format!("incomplete dense pair list: missing pair ({ei},{ej})"),
        ));
    }
    MultilayerNetwork::new(n, k, weights)
}

pub fn read_network(path: impl AsRef<Path>) -> Result<MultilayerNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network(&text)
}

pub fn write_network(net: &MultilayerNetwork, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, network_to_string(net).as_bytes())
}

/// Write via a temporary sibling file and rename, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Hard labels plus optional soft memberships per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Memberships {
    pub labels: Vec<usize>,
    pub tau: Option<Vec<Vec<f64>>>,
}

pub fn memberships_to_string(labels: &[usize], tau: &[Vec<f64>]) -> String {
    let q = tau.first().map_or(0, |r| r.len());
    let mut out = String::from("node,block");
    for c in 0..q {
        let _ = write!(out, ",tau_{c}");
    }
    out.push('\n');
    for (i, (l, row)) in labels.iter().zip(tau).enumerate() {
        let _ = write!(out, "{i},{l}");
        for v in row {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_memberships(text: &str) -> Result<Memberships> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty membership file"))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 2 || cols[0] != "node" || cols[1] != "block" {
        return Err(Error::parse(1, "membership header must start with `node,block`"));
    }
    for (c, name) in cols[2..].iter().enumerate() {
        if *name != format!("tau_{c}") {
            return Err(Error::parse(1, format!("unexpected column `{name}`")));
        }
    }
    let q = cols.len() - 2;
    let mut labels = Vec::new();
    let mut tau = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let node: usize = f[0].parse().map_err(|_| Error::parse(lineno, "bad node index"))?;
        if node != labels.len() {
            return Err(Error::parse(lineno, format!("expected node {}, found {node}", labels.len())));
        }
        labels.push(f[1].parse().map_err(|_| Error::parse(lineno, "bad block label"))?);
        let row = f[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(lineno, format!("bad tau `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        tau.push(row);
    }
    if labels.is_empty() {
        return Err(Error::parse(2, "membership file has no rows"));
    }
    Ok(Memberships {
        labels,
        tau: (q > 0).then_some(tau),
    })
}

pub fn read_memberships(path: impl AsRef<Path>) -> Result<Memberships> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_memberships(&text)
}

/// Response CSV: `subject,<layer>:<item>,...` with cells 1, 0 or NA.
/// Layers appear in order of their first column.
pub fn parse_responses(text: &str) -> Result<ResponseMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty response file"))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"subject") {
        return Err(Error::parse(1, "response header must start with `subject`"));
    }
    let mut layer_names: Vec<String> = Vec::new();
    let mut col_layer = Vec::with_capacity(cols.len() - 1);
    for c in &cols[1..] {
        let (layer, item) = c
            .split_once(':')
            .ok_or_else(|| Error::parse(1, format!("column `{c}` is not `<layer>:<item>`")))?;
        if layer.is_empty() || item.is_empty() {
            return Err(Error::parse(1, format!("column `{c}` is not `<layer>:<item>`")));
        }
        let idx = match layer_names.iter().position(|l| l == layer) {
            Some(i) => i,
            None => {
                layer_names.push(layer.to_string());
                layer_names.len() - 1
            }
        };
        col_layer.push(idx);
    }
    if layer_names.is_empty() {
        return Err(Error::parse(1, "response file has no item columns"));
    }
    let mut subjects = Vec::new();
    let mut layers: Vec<ResponseLayer> = layer_names
        .into_iter()
        .map(|name| ResponseLayer { name, items: Vec::new() })
        .collect();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        subjects.push(f[0].to_string());
        for l in layers.iter_mut() {
            l.items.push(Vec::new());
        }
        for (cell, &l) in f[1..].iter().zip(&col_layer) {
            let r = match cell.trim() {
                "1" => Response::Yes,
                "0" => Response::No,
                "NA" => Response::Missing,
                other => return Err(Error::parse(lineno, format!("cell `{other}` is not 1, 0 or NA"))),
            };
            layers[l].items.last_mut().expect("row pushed above").push(r);
        }
    }
    Ok(ResponseMatrix {
        n_subjects: subjects.len(),
        subjects,
        layers,
    })
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<ResponseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_responses(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// JSON parameter document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ParamFile {
    pub Q: usize,
    pub K: usize,
    pub alpha: Vec<f64>,
    pub psi: f64,
    pub noise_block: usize,
    pub blocks: Vec<BlockEntry>,
    pub noise: NoiseEntry,
    pub elbo: Option<f64>,
    pub icl: Option<f64>,
    pub seed: u64,
}

impl ParamFile {
    pub fn new(params: &ModelParams, elbo: Option<f64>, icl: Option<f64>, seed: u64) -> Self {
        ParamFile {
            Q: params.num_blocks(),
            K: params.num_layers(),
            alpha: params.alpha.clone(),
            psi: params.psi,
            noise_block: params.noise_block,
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    mu: b.mu.clone(),
                    var: b.var.clone(),
                    rho: b.rho,
                })
                .collect(),
            noise: NoiseEntry {
                mu: params.noise.mu.clone(),
                var: params.noise.var.clone(),
            },
            elbo,
            icl,
            seed,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let params = ModelParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    mu: b.mu.clone(),
                    var: b.var.clone(),
                    rho: b.rho,
                })
                .collect(),
            noise: NoiseParams {
                mu: self.noise.mu.clone(),
                var: self.noise.var.clone(),
            },
            alpha: self.alpha.clone(),
            psi: self.psi,
            noise_block: self.noise_block,
        };
        if params.num_blocks() != self.Q || params.num_layers() != self.K {
            return Err(Error::invalid("parameter file Q/K disagree with block entries"));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("parameter file serialises");
        s.push('\n');
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const CANONICAL: &str = "#sbanm-net v1 n=3 K=2\n\
0\t1\t1.0000000000000000e0\t-2.5000000000000000e-1\n\
0\t2\t3.3333333333333331e-1\t0.0000000000000000e0\n\
1\t2\t1.2345678901234501e5\t-7.0000000000000000e0\n";

    #[test]
    fn canonical_file_parses_and_round_trips() {
        let net = parse_network(CANONICAL).unwrap();
        assert_eq!(net.num_nodes(), 3);
        assert_eq!(net.num_layers(), 2);
        assert_eq!(net.num_pairs(), 3);
        assert_eq!(net.edge(0, 2)[0], 1.0 / 3.0);
        assert_eq!(network_to_string(&net), CANONICAL);
    }

    #[test]
    fn missing_pair_is_reported() {
        let text = "#sbanm-net v1 n=3 K=1\n0\t1\t1.0\n1\t2\t2.0\n";
        let err = parse_network(text).unwrap_err().to_string();
        assert!(err.contains("incomplete dense pair list"), "{err}");
        assert!(err.starts_with("line 3"), "{err}");
        let truncated = "#sbanm-net v1 n=3 K=1\n0\t1\t1.0\n0\t2\t2.0\n";
        assert!(parse_network(truncated).unwrap_err().to_string().contains("incomplete dense pair list"));
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        assert!(parse_network("#nope\n").unwrap_err().to_string().contains("malformed header"));
        let nan = "#sbanm-net v1 n=2 K=1\n0\t1\tNaN\n";
        assert_eq!(parse_network(nan).unwrap_err().to_string(), "line 2: non-finite weight");
        let short = "#sbanm-net v1 n=2 K=2\n0\t1\t1.0\n";
        assert!(parse_network(short).unwrap_err().to_string().starts_with("line 2"));
    }

    #[test]
    fn memberships_round_trip() {
        let tau = vec![vec![0.25, 0.75], vec![1.0, 0.0]];
        let text = memberships_to_string(&[1, 0], &tau);
        assert!(text.starts_with("node,block,tau_0,tau_1\n0,1,"));
        let m = parse_memberships(&text).unwrap();
        assert_eq!(m.labels, vec![1, 0]);
        assert_eq!(m.tau.unwrap(), tau);
        let bare = parse_memberships("node,block\n0,2\n1,0\n").unwrap();
        assert_eq!(bare.labels, vec![2, 0]);
        assert!(bare.tau.is_none());
    }

    #[test]
    fn responses_parse_by_layer() {
        let text = "subject,anx:q1,mood:q1,anx:q2\na,1,0,NA\nb,0,0,1\n";
        let r = parse_responses(text).unwrap();
        assert_eq!(r.n_subjects, 2);
        assert_eq!(r.layers.len(), 2);
        assert_eq!(r.layers[0].name, "anx");
        assert_eq!(r.layers[0].items[0], vec![Response::Yes, Response::Missing]);
        assert_eq!(r.layers[1].items[1], vec![Response::No]);
        assert!(parse_responses("subject,anx:q1\na,2\n").is_err());
        assert!(parse_responses("subject,q1\na,1\n").is_err());
    }

    #[test]
    fn param_file_keys() {
        let params = ModelParams {
            blocks: vec![
                BlockParams { mu: vec![0.0], var: vec![1.0], rho: 0.0 },
                BlockParams { mu: vec![2.0], var: vec![0.5], rho: 0.0 },
            ],
            noise: NoiseParams { mu: vec![0.0], var: vec![1.0] },
            alpha: vec![0.5, 0.5],
            psi: 0.5,
            noise_block: 0,
        };
        let doc = ParamFile::new(&params, Some(-1.5), None, 7);
        let v: serde_json::Value = serde_json::from_str(&doc.to_json()).unwrap();
        for key in ["Q", "K", "alpha", "psi", "noise_block", "blocks", "noise", "elbo", "icl", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ParamFile = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back.to_params().unwrap(), params);
    }

    proptest! {
        #[test]
        fn random_networks_round_trip_byte_identically(seed in any::<u64>(), n in 2usize..9, k in 1usize..4) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let net = MultilayerNetwork::from_fn(n, k, |_, _, _| {
                let scale = 10f64.powi(rng.random_range(-8..8));
                rng.random_range(-1.0..1.0) * scale
            }).unwrap();
            let text = network_to_string(&net);
            let back = parse_network(&text).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(network_to_string(&back), text);
        }
    }

    #[test]
    fn atomic_write_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tsv");
        let net = parse_network(CANONICAL).unwrap();
        write_network(&net, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), CANONICAL);
        assert_eq!(read_network(&path).unwrap(), net);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

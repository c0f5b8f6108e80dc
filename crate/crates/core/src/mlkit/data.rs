use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Dataset("no samples".into()));
        }
        if dim == 0 || classes == 0 {
            return Err(Error::Dataset("dimension and class count must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "{} features for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Dataset(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite feature in sample {}", i / dim)));
        }
        Ok(Self { features, labels, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.dim, self.classes)
    }

    /// First `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Self, Self)> {
        let all: Vec<usize> = (0..self.len()).collect();
        if n == 0 || n >= self.len() {
            return Err(Error::Dataset(format!("cannot split {} samples at {n}", self.len())));
        }
        Ok((self.subset(&all[..n])?, self.subset(&all[n..])?))
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Shannon entropy of the label distribution, in nats.
    pub fn label_entropy(&self) -> f64 {
        let n = self.len() as f64;
        self.label_counts()
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    /// Parses the text format: a header line `m p C`, then `m` lines of `p`
    /// reals followed by an integer label.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let bad = |line: usize, msg: String| Error::Dataset(format!("line {line}: {msg}"));
        let (n, header) = lines.next().ok_or_else(|| Error::Dataset("empty input".into()))?;
        let header = header?;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(n, format!("bad header field {t:?}"))))
            .collect::<Result<_>>()?;
        let [m, dim, classes] = fields[..] else {
            return Err(bad(n, "header must be `m p C`".into()));
        };
        let mut features = Vec::with_capacity(m * dim);
        let mut labels = Vec::with_capacity(m);
        for (n, line) in lines {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != dim + 1 {
                return Err(bad(n, format!("expected {} fields, found {}", dim + 1, tokens.len())));
            }
            for t in &tokens[..dim] {
                features.push(t.parse().map_err(|_| bad(n, format!("bad feature {t:?}")))?);
            }
            let y = tokens[dim];
            labels.push(y.parse().map_err(|_| bad(n, format!("bad label {y:?}")))?);
        }
        if labels.len() != m {
            return Err(Error::Dataset(format!("header promises {m} samples, found {}", labels.len())));
        }
        Self::new(features, labels, dim, classes)
    }

    pub fn write_text<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{} {} {}", self.len(), self.dim, self.classes)?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(writer, "{v} ")?;
            }
            writeln!(writer, "{}", self.labels[i])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_text(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Gaussian clusters: class `c` has mean `separation / sqrt(2) * u_c` with
/// unit-variance isotropic noise. The `u_c` are orthonormal when
/// `dim >= classes` and random unit vectors otherwise, so class means sit
/// roughly `separation` apart. Samples come out shuffled.
pub fn make_synthetic<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Dataset("classes, dim and per_class must be positive".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Dataset(format!("invalid separation {separation}")));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let mut means = vec![0.0; classes * dim];
    for c in 0..classes {
        let mean = &mut means[c * dim..(c + 1) * dim];
        if dim >= classes {
            mean[c] = radius;
        } else {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (m, v) in mean.iter_mut().zip(dir) {
                *m = radius * v / norm;
            }
        }
    }

    let mut order: Vec<usize> = (0..classes * per_class).map(|i| i / per_class).collect();
    order.shuffle(rng);
    let mut features = Vec::with_capacity(order.len() * dim);
    for &c in &order {
        for k in 0..dim {
            let noise: f64 = StandardNormal.sample(rng);
            features.push(means[c * dim + k] + noise);
        }
    }
    Dataset::new(features, order, dim, classes)
}

/// Client shards over a source dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    pub clients: Vec<Dataset>,
    /// Source indices behind each client's shard.
    pub indices: Vec<Vec<usize>>,
    /// Source samples assigned to no client.
    pub dropped: usize,
}

impl Partition {
    fn from_indices(data: &Dataset, indices: Vec<Vec<usize>>) -> Result<Self> {
        let assigned: usize = indices.iter().map(Vec::len).sum();
        let clients = indices.iter().map(|ix| data.subset(ix)).collect::<Result<_>>()?;
        Ok(Self { clients, indices, dropped: data.len() - assigned })
    }

    /// Mean label entropy over clients, in nats.
    pub fn mean_label_entropy(&self) -> f64 {
        self.clients.iter().map(Dataset::label_entropy).sum::<f64>() / self.clients.len() as f64
    }
}

/// Random equal shards of `floor(m / n)` samples; the remainder is dropped.
pub fn partition_iid<R: Rng + ?Sized>(data: &Dataset, n_clients: usize, rng: &mut R) -> Result<Partition> {
    if n_clients == 0 || data.len() < n_clients {
        return Err(Error::Partition(format!("{} samples for {n_clients} clients", data.len())));
    }
    let mut all: Vec<usize> = (0..data.len()).collect();
    all.shuffle(rng);
    let size = data.len() / n_clients;
    let indices = all.chunks_exact(size).take(n_clients).map(<[usize]>::to_vec).collect();
    Partition::from_indices(data, indices)
}

/// Sorts by label, cuts `n_clients * classes_per_client` contiguous shards
/// (sizes within one of each other) and deals `classes_per_client` random
/// shards to each client. Order within a class is random.
pub fn partition_label_shard<R: Rng + ?Sized>(
    data: &Dataset,
    n_clients: usize,
    classes_per_client: usize,
    rng: &mut R,
) -> Result<Partition> {
    let shards = n_clients
        .checked_mul(classes_per_client)
        .filter(|&s| s > 0)
        .ok_or_else(|| Error::Partition("need at least one client and one shard each".into()))?;
    let m = data.len();
    if m < shards {
        return Err(Error::Partition(format!("{m} samples cannot fill {shards} shards")));
    }
    let mut sorted: Vec<usize> = (0..m).collect();
    sorted.shuffle(rng);
    sorted.sort_by_key(|&i| data.label(i));

    let mut shard_ids: Vec<usize> = (0..shards).collect();
    shard_ids.shuffle(rng);
    let indices = shard_ids
        .chunks(classes_per_client)
        .map(|ids| {
            ids.iter()
                .flat_map(|&s| sorted[s * m / shards..(s + 1) * m / shards].iter().copied())
                .collect()
        })
        .collect();
    Partition::from_indices(data, indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::BTreeSet;

    fn blobs(seed: u64) -> Dataset {
        make_synthetic(4, 3, 25, 2.0, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn synthetic_is_reproducible_and_balanced() {
        let a = blobs(1);
        assert_eq!(a, blobs(1));
        assert_ne!(a, blobs(2));
        assert_eq!(a.label_counts(), vec![25; 4]);
        assert_eq!(a.dim(), 3);
    }

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![], vec![], 2, 2).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], vec![2], 2, 2).is_err());
        assert!(Dataset::new(vec![1.0], vec![0], 2, 2).is_err());
        assert!(Dataset::new(vec![f64::NAN, 1.0], vec![0], 2, 2).is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = blobs(3);
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        assert_eq!(Dataset::read_text(&buf[..]).unwrap(), d);
    }

    #[test]
    fn text_errors_name_the_line() {
        let err = Dataset::read_text("2 2 3\n0.5 1 0\n0.5 x 1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(Dataset::read_text("2 2 3\n0.5 1 0\n".as_bytes()).is_err());
        assert!(Dataset::read_text("1 1 2\n0.5 2\n".as_bytes()).is_err());
    }

    #[test]
    fn iid_shards_are_equal_and_disjoint() {
        let d = blobs(4);
        let p = partition_iid(&d, 7, &mut seeded(1)).unwrap();
        assert!(p.clients.iter().all(|c| c.len() == 100 / 7));
        assert_eq!(p.dropped, 100 - 7 * (100 / 7));
        let all: BTreeSet<usize> = p.indices.iter().flatten().copied().collect();
        assert_eq!(all.len(), 7 * (100 / 7));

        let one = partition_iid(&d, 1, &mut seeded(1)).unwrap();
        assert_eq!(one.dropped, 0);
        let mut labels = one.clients[0].labels().to_vec();
        let mut original = d.labels().to_vec();
        labels.sort();
        original.sort();
        assert_eq!(labels, original);
        assert!(partition_iid(&d, 101, &mut seeded(1)).is_err());
    }

    #[test]
    fn label_shards() {
        let d = make_synthetic(10, 4, 53, 1.0, &mut seeded(5)).unwrap();
        let p = partition_label_shard(&d, 20, 1, &mut seeded(2)).unwrap();
        assert_eq!(p.dropped, 0);
        let sizes: Vec<usize> = p.clients.iter().map(Dataset::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for c in &p.clients {
            let labels: BTreeSet<usize> = c.labels().iter().copied().collect();
            assert!(labels.len() <= 2);
        }
        let all: BTreeSet<usize> = p.indices.iter().flatten().copied().collect();
        assert_eq!(all.len(), d.len());

        let full = partition_label_shard(&d, 1, 10, &mut seeded(2)).unwrap();
        assert_eq!(full.clients[0].len(), d.len());
        assert!(partition_label_shard(&d, 600, 1, &mut seeded(2)).is_err());
        assert!(partition_label_shard(&d, 0, 1, &mut seeded(2)).is_err());
    }

    #[test]
    fn single_class_shards_have_low_entropy() {
        let d = make_synthetic(10, 4, 100, 1.0, &mut seeded(6)).unwrap();
        let iid = partition_iid(&d, 100, &mut seeded(1)).unwrap().mean_label_entropy();
        let shard = partition_label_shard(&d, 100, 1, &mut seeded(1)).unwrap().mean_label_entropy();
        assert!(shard < 0.1 * iid, "{shard} vs {iid}");
    }
}

//! Datasets, the Swiss-roll generator, client partitioners, and the
//! server's unlabeled pool.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// Features with hard labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape {
                what: "labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Row indices of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// Drop the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features.clone(),
        }
    }
}

/// Features only. The server's distillation pool.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: Matrix,
}

impl UnlabeledDataset {
    pub fn new(features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Capacity("unlabeled pool must be nonempty".into()));
        }
        Ok(UnlabeledDataset { features })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwissRollSpec {
    pub class_count: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_sigma: f64,
    pub turns: f64,
    pub seed: u64,
}

impl Default for SwissRollSpec {
    fn default() -> Self {
        SwissRollSpec {
            class_count: 3,
            train_per_class: 400,
            test_per_class: 200,
            noise_sigma: 0.05,
            turns: 1.5,
            seed: 0,
        }
    }
}

impl SwissRollSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("swiss roll sizes must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.turns > 0.0) {
            return Err(Error::Config("swiss roll needs noise >= 0 and turns > 0".into()));
        }
        Ok(())
    }

    /// Arm parameterization: `(r cos θ, r sin θ)` with `θ = 2π·turns·t + c·2π/C`
    /// and `r = 0.25 + t`.
    pub fn arm_point(&self, class: usize, t: f64) -> [f64; 2] {
        let tau = std::f64::consts::TAU;
        let theta = tau * self.turns * t + class as f64 * tau / self.class_count as f64;
        let r = 0.25 + t;
        [r * theta.cos(), r * theta.sin()]
    }
}

/// Raw (unstandardized) spiral points plus the arm parameter `t` of each.
pub fn swiss_roll_raw(
    spec: &SwissRollSpec,
    per_class: usize,
    split_tag: &str,
) -> (LabeledDataset, Vec<f64>) {
    let mut data = Vec::with_capacity(per_class * spec.class_count * 2);
    let mut labels = Vec::with_capacity(per_class * spec.class_count);
    let mut ts = Vec::with_capacity(per_class * spec.class_count);
    for c in 0..spec.class_count {
        let mut rng = RngStream::derive(spec.seed, split_tag, c as u64, 0);
        for _ in 0..per_class {
            let t = rng.uniform();
            let [x, y] = spec.arm_point(c, t);
            let (nx, ny) = if spec.noise_sigma > 0.0 {
                (rng.normal() * spec.noise_sigma, rng.normal() * spec.noise_sigma)
            } else {
                (0.0, 0.0)
            };
            data.push(x + nx);
            data.push(y + ny);
            labels.push(c);
            ts.push(t);
        }
    }
    let n = labels.len();
    let ds = LabeledDataset::new(Matrix::from_vec(n, 2, data), labels, spec.class_count)
        .expect("generator labels are in range");
    (ds, ts)
}

/// Per-column `(mean, std)` of a feature matrix.
pub fn column_stats(m: &Matrix) -> Vec<(f64, f64)> {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|j| {
            let mean = m.iter_rows().map(|r| r[j]).sum::<f64>() / n;
            let var = m.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

fn standardize(m: &mut Matrix, stats: &[(f64, f64)]) {
    for i in 0..m.rows() {
        for (v, &(mean, sd)) in m.row_mut(i).iter_mut().zip(stats) {
            *v = if sd > 0.0 { (*v - mean) / sd } else { *v - mean };
        }
    }
}

/// Train and test Swiss-roll sets, standardized with the train statistics.
pub fn generate_swiss_roll(spec: &SwissRollSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let (mut train, _) = swiss_roll_raw(spec, spec.train_per_class, "swiss-roll-train");
    let (mut test, _) = swiss_roll_raw(spec, spec.test_per_class, "swiss-roll-test");
    let stats = column_stats(&train.features);
    standardize(&mut train.features, &stats);
    standardize(&mut test.features, &stats);
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    Step,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub client_count: usize,
    /// Major classes per client (Step).
    #[serde(default)]
    pub step_major_classes: usize,
    /// Examples drawn from each major class (Step).
    #[serde(default)]
    pub step_major_count: usize,
    /// Examples drawn from each minor class (Step).
    #[serde(default)]
    pub step_minor_count: usize,
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.1
}

impl PartitionSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.client_count == 0 {
            return Err(Error::Config("client_count must be >= 1".into()));
        }
        match self.kind {
            PartitionKind::Step if self.step_major_classes > class_count => Err(Error::Config(
                format!(
                    "{} major classes per client exceeds {class_count} classes",
                    self.step_major_classes
                ),
            )),
            PartitionKind::Dirichlet if !(self.dirichlet_alpha > 0.0) => {
                Err(Error::Config("dirichlet_alpha must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Major classes of `client` under round-robin assignment.
    pub fn major_classes(&self, client: usize, class_count: usize) -> Vec<usize> {
        let m = self.step_major_classes;
        (0..m).map(|k| (client * m + k) % class_count).collect()
    }
}

/// Client datasets plus the source row indices each was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<LabeledDataset>,
    pub indices: Vec<Vec<usize>>,
    /// Source rows assigned to no client.
    pub discarded: usize,
}

impl Partition {
    fn from_indices(data: &LabeledDataset, indices: Vec<Vec<usize>>) -> Self {
        let assigned: usize = indices.iter().map(Vec::len).sum();
        Partition {
            clients: indices.iter().map(|idx| data.subset(idx)).collect(),
            discarded: data.len() - assigned,
            indices,
        }
    }
}

pub fn partition(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate(data.class_count())?;
    match spec.kind {
        PartitionKind::Iid => partition_iid(data, spec),
        PartitionKind::Step => partition_step(data, spec),
        PartitionKind::Dirichlet => partition_dirichlet(data, spec),
    }
}

/// Seeded shuffle dealt into near-equal contiguous shares.
pub fn partition_iid(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate(data.class_count())?;
    let n = spec.client_count;
    let mut rng = RngStream::derive(spec.seed, "partition-iid", 0, 0);
    let order = rng.permutation(data.len());
    let base = data.len() / n;
    let extra = data.len() % n;
    let mut indices = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let take = base + usize::from(i < extra);
        indices.push(order[start..start + take].to_vec());
        start += take;
    }
    Ok(Partition::from_indices(data, indices))
}

/// Each client takes `step_major_count` examples from each of its major
/// classes and `step_minor_count` from every other class, without
/// replacement. Leftover examples are discarded.
pub fn partition_step(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate(data.class_count())?;
    let classes = data.class_count();
    let mut pools = data.indices_by_class();
    for (c, pool) in pools.iter_mut().enumerate() {
        RngStream::derive(spec.seed, "partition-step", c as u64, 0).shuffle(pool);
    }
    let mut cursor = vec![0usize; classes];
    let mut indices = vec![Vec::new(); spec.client_count];
    for (client, idx) in indices.iter_mut().enumerate() {
        let majors = spec.major_classes(client, classes);
        for c in 0..classes {
            let want = if majors.contains(&c) {
                spec.step_major_count
            } else {
                spec.step_minor_count
            };
            let end = cursor[c] + want;
            if end > pools[c].len() {
                return Err(Error::Capacity(format!(
                    "class {c} has {} examples, step partition needs more (client {client} wants {want})",
                    pools[c].len()
                )));
            }
            idx.extend_from_slice(&pools[c][cursor[c]..end]);
            cursor[c] = end;
        }
    }
    let part = Partition::from_indices(data, indices);
    if part.discarded > 0 {
        info!("step partition discarded {} examples", part.discarded);
    }
    Ok(part)
}

/// Largest-remainder apportionment of `total` items by `weights` (which sum
/// to one). Ties go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per class `c`, draw `q_c ~ Dir(α·1_N)` and hand the class's examples to
/// clients in proportion to `q_c`.
pub fn partition_dirichlet(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate(data.class_count())?;
    if data.is_empty() {
        return Err(Error::Capacity("cannot partition an empty dataset".into()));
    }
    let n = spec.client_count;
    let alpha = vec![spec.dirichlet_alpha; n];
    let mut indices = vec![Vec::new(); n];
    for (c, mut pool) in data.indices_by_class().into_iter().enumerate() {
        let mut rng = RngStream::derive(spec.seed, "partition-dirichlet", c as u64, 0);
        let q = rng.dirichlet(&alpha);
        rng.shuffle(&mut pool);
        let counts = largest_remainder(pool.len(), &q);
        let mut start = 0;
        for (client, &k) in counts.iter().enumerate() {
            indices[client].extend_from_slice(&pool[start..start + k]);
            start += k;
        }
    }
    for (client, idx) in indices.iter().enumerate() {
        if idx.is_empty() {
            info!("dirichlet partition left client {client} with no data");
        }
    }
    Ok(Partition::from_indices(data, indices))
}

/// Seeded split: `⌈fraction·N⌉` examples are held out, the rest stay labeled.
/// Returns `(client_pool, held_out)`; the held-out labels are for diagnostics.
pub fn split_labeled(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("server fraction {fraction} outside (0, 1)")));
    }
    let order = RngStream::derive(seed, "server-split", 0, 0).permutation(data.len());
    let k = (fraction * data.len() as f64).ceil() as usize;
    let (server, clients) = order.split_at(k);
    Ok((data.subset(clients), data.subset(server)))
}

/// Client pool and the server's label-free pool.
pub fn split_server_pool(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let (clients, server) = split_labeled(data, fraction, seed)?;
    Ok((clients, UnlabeledDataset::new(server.features)?))
}

fn header(dim: usize, trailing: impl IntoIterator<Item = String>) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).chain(trailing).collect()
}

/// CSV with header `x0,...,x{d-1},label`.
pub fn write_labeled_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(data.dim(), ["label".to_string()]))?;
    for (row, &y) in data.features.iter_rows().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Same layout with every label written as `-1`.
pub fn write_unlabeled_csv(data: &UnlabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(data.features.cols(), ["label".to_string()]))?;
    for row in data.features.iter_rows() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push("-1".into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows as read from a dataset CSV; `None` marks an unlabeled (`-1`) row.
pub struct CsvRows {
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<CsvRows> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().last() != Some("label") || headers.len() < 2 {
        return Err(Error::Format("dataset CSV needs x0..xd-1 columns then label".into()));
    }
    let dim = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for j in 0..dim {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad feature value {:?}", &rec[j])))?;
            data.push(v);
        }
        let y: i64 = rec[dim]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad label {:?}", &rec[dim])))?;
        labels.push(usize::try_from(y).ok());
    }
    Ok(CsvRows {
        features: Matrix::from_vec(labels.len(), dim, data),
        labels,
    })
}

/// Reads a fully labeled CSV. `class_count` defaults to `max label + 1`.
pub fn read_labeled_csv(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<LabeledDataset> {
    let rows = read_csv(path)?;
    let labels: Vec<usize> = rows
        .labels
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Format("labeled CSV contains -1 labels".into()))?;
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(rows.features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roll() -> (LabeledDataset, LabeledDataset) {
        generate_swiss_roll(&SwissRollSpec {
            seed: 17,
            ..Default::default()
        })
        .unwrap()
    }

    fn step_spec(seed: u64) -> PartitionSpec {
        PartitionSpec {
            kind: PartitionKind::Step,
            client_count: 3,
            step_major_classes: 1,
            step_major_count: 320,
            step_minor_count: 40,
            dirichlet_alpha: 0.1,
            seed,
        }
    }

    #[test]
    fn noiseless_points_lie_on_arms() {
        let spec = SwissRollSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let (ds, ts) = swiss_roll_raw(&spec, 50, "t");
        for (i, (row, &y)) in ds.features().iter_rows().zip(ds.labels()).enumerate() {
            let [x, yv] = spec.arm_point(y, ts[i]);
            assert!((row[0] - x).abs() < 1e-9 && (row[1] - yv).abs() < 1e-9);
            // Radius law independent of the generator's own arm_point call.
            let r = (row[0].powi(2) + row[1].powi(2)).sqrt();
            assert!((r - (0.25 + ts[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn swiss_roll_sizes_and_balance() {
        let (train, test) = roll();
        assert_eq!(train.len(), 1200);
        assert_eq!(test.len(), 600);
        assert_eq!(train.class_histogram(), vec![400; 3]);
        assert_eq!(test.class_histogram(), vec![200; 3]);
    }

    #[test]
    fn swiss_roll_deterministic() {
        assert_eq!(roll(), roll());
    }

    #[test]
    fn train_features_standardized() {
        let (train, _) = roll();
        for (mean, sd) in column_stats(train.features()) {
            assert!(mean.abs() < 1e-9);
            assert!((sd * sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn step_partition_eighty_twenty() {
        let (train, _) = roll();
        let p = partition_step(&train, &step_spec(1)).unwrap();
        for (i, client) in p.clients.iter().enumerate() {
            let h = client.class_histogram();
            assert_eq!(client.len(), 400);
            for (c, &count) in h.iter().enumerate() {
                assert_eq!(count, if c == i { 320 } else { 40 });
            }
        }
        assert_eq!(p.discarded, 0);
    }

    #[test]
    fn step_partition_no_duplicates() {
        let (train, _) = roll();
        let spec = PartitionSpec {
            step_major_count: 200,
            step_minor_count: 30,
            ..step_spec(2)
        };
        let p = partition_step(&train, &spec).unwrap();
        let mut all: Vec<usize> = p.indices.concat();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(p.discarded, 1200 - n);
    }

    #[test]
    fn step_partition_iid_degenerate() {
        let (train, _) = roll();
        let spec = PartitionSpec {
            step_major_classes: 3,
            step_major_count: 100,
            step_minor_count: 100,
            ..step_spec(3)
        };
        let p = partition_step(&train, &spec).unwrap();
        let h0 = p.clients[0].class_histogram();
        assert!(p.clients.iter().all(|c| c.class_histogram() == h0));
    }

    #[test]
    fn step_partition_capacity_error() {
        let (train, _) = roll();
        let spec = PartitionSpec {
            step_major_count: 330,
            ..step_spec(4)
        };
        let err = partition_step(&train, &spec).unwrap_err();
        assert!(matches!(err, Error::Capacity(msg) if msg.contains("class")));
    }

    #[test]
    fn dirichlet_large_alpha_is_even() {
        let (train, _) = roll();
        let spec = PartitionSpec {
            kind: PartitionKind::Dirichlet,
            client_count: 2,
            dirichlet_alpha: 1e6,
            ..step_spec(5)
        };
        let p = partition_dirichlet(&train, &spec).unwrap();
        for client in &p.clients {
            for &count in &client.class_histogram() {
                assert!((count as i64 - 200).abs() <= 1, "{count}");
            }
        }
    }

    #[test]
    fn dirichlet_conserves_and_repeats() {
        let (train, _) = roll();
        let spec = PartitionSpec {
            kind: PartitionKind::Dirichlet,
            client_count: 7,
            dirichlet_alpha: 0.1,
            ..step_spec(6)
        };
        let p = partition_dirichlet(&train, &spec).unwrap();
        assert_eq!(p.discarded, 0);
        let mut per_class = vec![0; 3];
        for c in &p.clients {
            for (k, v) in c.class_histogram().into_iter().enumerate() {
                per_class[k] += v;
            }
        }
        assert_eq!(per_class, train.class_histogram());
        let mut all = p.indices.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1200).collect::<Vec<_>>());
        assert_eq!(p, partition_dirichlet(&train, &spec).unwrap());
    }

    #[test]
    fn dirichlet_proportion_statistics() {
        let mut rng = RngStream::derive(2024, "dirichlet-stats", 0, 0);
        let mut mean = [0.0; 10];
        for _ in 0..1000 {
            let q = rng.dirichlet(&[0.1; 10]);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (m, v) in mean.iter_mut().zip(&q) {
                *m += v / 1000.0;
            }
        }
        for m in mean {
            assert!((m - 0.1).abs() < 0.02, "{m}");
        }
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(largest_remainder(7, &[1.0 / 3.0; 3]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(0, &[0.2, 0.8]), vec![0, 0]);
    }

    #[test]
    fn server_split_sizes_and_conservation() {
        let (train, _) = roll();
        let (pool, server) = split_server_pool(&train, 0.2, 9).unwrap();
        assert_eq!(server.len(), 240);
        assert_eq!(pool.len(), 960);
        let key = |r: &[f64]| (r[0].to_bits(), r[1].to_bits());
        let mut joined: Vec<_> = pool
            .features()
            .iter_rows()
            .chain(server.features().iter_rows())
            .map(key)
            .collect();
        let mut orig: Vec<_> = train.features().iter_rows().map(key).collect();
        joined.sort_unstable();
        orig.sort_unstable();
        assert_eq!(joined, orig);
        assert_eq!(split_server_pool(&train, 0.2, 9).unwrap(), (pool, server));
    }

    #[test]
    fn server_split_rejects_bad_fraction() {
        let (train, _) = roll();
        assert!(split_server_pool(&train, 0.0, 1).is_err());
        assert!(split_server_pool(&train, 1.0, 1).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let (train, _) = roll();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_labeled_csv(&train, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
        assert_eq!(read_labeled_csv(&path, Some(3)).unwrap(), train);

        let upath = dir.path().join("u.csv");
        write_unlabeled_csv(&train.unlabeled(), &upath).unwrap();
        let rows = read_csv(&upath).unwrap();
        assert!(rows.labels.iter().all(Option::is_none));
        assert!(read_labeled_csv(&upath, None).is_err());
    }
}

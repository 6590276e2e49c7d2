use crate::error::{Error, Result};

use super::{cosine_similarity, TokenGrid};

/// One key-value entry of a sensor pool.
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// Timeline index the entry was produced at.
    pub timestamp: u64,
    pub sensor: usize,
    /// Running sum of the attention mass this entry has received,
    /// averaged over query tokens per attend call. Never decreases.
    pub accumulated_attention: f64,
}

/// Which store of a pool an entry lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    Working,
    LongTerm,
}

/// Stable reference to an entry across pools, valid until the next
/// mutating pool operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryRef {
    pub sensor: usize,
    pub store: StoreKind,
    pub index: usize,
}

/// Selection stage: temporal streams read only their own sensor's pool,
/// the spatial stage also reads pools of sensors with overlapping views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Temporal,
    Spatial,
}

/// Capacities and thresholds of the memory pools.
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub token_dim: usize,
    /// Number of most recent frames held in working memory.
    pub working_frames: usize,
    /// Maximum number of long-term entries per sensor.
    pub long_term_capacity: usize,
    /// Insertion gate: entries whose best cosine similarity against
    /// long-term keys reaches this are discarded.
    pub similarity_threshold: f64,
    /// Spatial stage looks back this many timeline steps into related
    /// sensors' pools.
    pub related_timestamps: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            token_dim: 64,
            working_frames: 5,
            long_term_capacity: 4096,
            similarity_threshold: 0.95,
            related_timestamps: 4,
        }
    }
}

/// Outcome counters of one insert call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertStats {
    pub kept: usize,
    pub discarded: usize,
    pub migrated: usize,
    pub pruned: usize,
}

/// Working and long-term entry stores of one sensor.
#[derive(Debug, Clone)]
pub struct SensorPool {
    pub sensor: usize,
    working: Vec<MemoryEntry>,
    long_term: Vec<MemoryEntry>,
}

impl SensorPool {
    pub fn new(sensor: usize) -> Self {
        Self { sensor, working: Vec::new(), long_term: Vec::new() }
    }

    pub fn working(&self) -> &[MemoryEntry] {
        &self.working
    }

    pub fn long_term(&self) -> &[MemoryEntry] {
        &self.long_term
    }

    pub fn len(&self) -> usize {
        self.working.len() + self.long_term.len()
    }

    pub fn is_empty(&self) -> bool {
        self.working.is_empty() && self.long_term.is_empty()
    }

    fn newest_timestamp(&self) -> Option<u64> {
        self.working
            .iter()
            .chain(&self.long_term)
            .map(|e| e.timestamp)
            .max()
    }

    /// Distinct timestamps present in working memory, ascending.
    fn working_timestamps(&self) -> Vec<u64> {
        let mut ts: Vec<u64> = self.working.iter().map(|e| e.timestamp).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Inserts one frame's entries at timeline index `t`.
    ///
    /// Entries too similar to existing long-term keys are discarded; the
    /// rest join working memory in chronological order. Working memory is
    /// then rolled forward to the most recent `working_frames` frames,
    /// evicted frames migrate to long-term storage, and the long-term
    /// store is pruned if it overflows.
    pub fn insert(
        &mut self,
        entries: Vec<MemoryEntry>,
        t: u64,
        cfg: &PoolConfig,
    ) -> Result<InsertStats> {
        if let Some(newest) = self.newest_timestamp() {
            if t < newest {
                return Err(Error::OutOfOrderTimestamp { inserted: t, newest });
            }
        }
        let mut stats = InsertStats::default();
        for mut e in entries {
            e.timestamp = t;
            e.sensor = self.sensor;
            let dup = self
                .long_term
                .iter()
                .any(|stored| cosine_similarity(&e.key, &stored.key) >= cfg.similarity_threshold);
            if dup {
                stats.discarded += 1;
            } else {
                stats.kept += 1;
                self.working.push(e);
            }
        }

        // Roll working memory forward to the newest `working_frames`
        // distinct timestamps; everything older migrates to long-term.
        let ts = self.working_timestamps();
        if ts.len() > cfg.working_frames {
            let cutoff = ts[ts.len() - cfg.working_frames];
            let mut kept = Vec::with_capacity(self.working.len());
            for e in self.working.drain(..) {
                if e.timestamp < cutoff {
                    stats.migrated += 1;
                    self.long_term.push(e);
                } else {
                    kept.push(e);
                }
            }
            self.working = kept;
            self.long_term.sort_by_key(|e| e.timestamp);
        }

        stats.pruned = self.prune(cfg);
        Ok(stats)
    }

    /// Removes the lowest-attention long-term entries until the store is
    /// back at capacity; ties evict the older timestamp first. Returns
    /// the number of removed entries.
    pub fn prune(&mut self, cfg: &PoolConfig) -> usize {
        if self.long_term.len() <= cfg.long_term_capacity {
            return 0;
        }
        let excess = self.long_term.len() - cfg.long_term_capacity;
        let mut order: Vec<usize> = (0..self.long_term.len()).collect();
        order.sort_by(|&a, &b| {
            let ea = &self.long_term[a];
            let eb = &self.long_term[b];
            ea.accumulated_attention
                .partial_cmp(&eb.accumulated_attention)
                .unwrap()
                .then(ea.timestamp.cmp(&eb.timestamp))
                .then(a.cmp(&b))
        });
        let mut drop = vec![false; self.long_term.len()];
        for &i in order.iter().take(excess) {
            drop[i] = true;
        }
        let mut idx = 0;
        self.long_term.retain(|_| {
            let keep = !drop[idx];
            idx += 1;
            keep
        });
        excess
    }

    /// True when entries are stored in nondecreasing timestamp order.
    pub fn is_chronological(&self) -> bool {
        let ok = |es: &[MemoryEntry]| es.windows(2).all(|w| w[0].timestamp <= w[1].timestamp);
        ok(&self.working) && ok(&self.long_term)
    }
}

/// All sensors' pools plus the static view-overlap adjacency.
#[derive(Debug, Clone)]
pub struct PoolSet {
    pools: Vec<SensorPool>,
    pub config: PoolConfig,
    /// `adjacency[c]` lists sensors whose view frustum overlaps sensor c.
    pub adjacency: Vec<Vec<usize>>,
}

impl PoolSet {
    pub fn new(num_sensors: usize, config: PoolConfig, adjacency: Vec<Vec<usize>>) -> Self {
        assert_eq!(adjacency.len(), num_sensors);
        Self {
            pools: (0..num_sensors).map(SensorPool::new).collect(),
            config,
            adjacency,
        }
    }

    pub fn pool(&self, sensor: usize) -> &SensorPool {
        &self.pools[sensor]
    }

    pub fn pool_mut(&mut self, sensor: usize) -> &mut SensorPool {
        &mut self.pools[sensor]
    }

    pub fn pools(&self) -> &[SensorPool] {
        &self.pools
    }

    pub fn total_entries(&self) -> usize {
        self.pools.iter().map(|p| p.len()).sum()
    }

    fn entry(&self, r: EntryRef) -> &MemoryEntry {
        match r.store {
            StoreKind::Working => &self.pools[r.sensor].working[r.index],
            StoreKind::LongTerm => &self.pools[r.sensor].long_term[r.index],
        }
    }

    fn entry_mut(&mut self, r: EntryRef) -> &mut MemoryEntry {
        match r.store {
            StoreKind::Working => &mut self.pools[r.sensor].working[r.index],
            StoreKind::LongTerm => &mut self.pools[r.sensor].long_term[r.index],
        }
    }

    /// Entries relevant to sensor `c` attending at timeline index `t`.
    ///
    /// Temporal stage: the sensor's whole pool, restricted to entries
    /// strictly older than `t`. Spatial stage: overlapping sensors'
    /// entries from the previous `related_timestamps` timeline steps,
    /// plus the sensor's own working set re-selected as the
    /// `working_frames` stored frames most similar to its latest frame
    /// (mean key cosine similarity).
    pub fn select_related(&self, t: u64, c: usize, stage: Stage) -> Vec<EntryRef> {
        let mut out = Vec::new();
        let own = &self.pools[c];
        match stage {
            Stage::Temporal => {
                for (i, e) in own.working.iter().enumerate() {
                    if e.timestamp < t {
                        out.push(EntryRef { sensor: c, store: StoreKind::Working, index: i });
                    }
                }
                for (i, e) in own.long_term.iter().enumerate() {
                    if e.timestamp < t {
                        out.push(EntryRef { sensor: c, store: StoreKind::LongTerm, index: i });
                    }
                }
            }
            Stage::Spatial => {
                let window_lo = t.saturating_sub(self.config.related_timestamps as u64);
                for &other in &self.adjacency[c] {
                    if other == c {
                        continue;
                    }
                    let pool = &self.pools[other];
                    for (i, e) in pool.working.iter().enumerate() {
                        if e.timestamp < t && e.timestamp >= window_lo {
                            out.push(EntryRef { sensor: other, store: StoreKind::Working, index: i });
                        }
                    }
                    for (i, e) in pool.long_term.iter().enumerate() {
                        if e.timestamp < t && e.timestamp >= window_lo {
                            out.push(EntryRef { sensor: other, store: StoreKind::LongTerm, index: i });
                        }
                    }
                }
                out.extend(self.similar_own_frames(t, c));
            }
        }
        out
    }

    /// The sensor's own entries grouped by frame, keeping the
    /// `working_frames` frames most similar to the newest stored frame.
    fn similar_own_frames(&self, t: u64, c: usize) -> Vec<EntryRef> {
        let own = &self.pools[c];
        let mut refs: Vec<(u64, EntryRef)> = Vec::new();
        for (i, e) in own.working.iter().enumerate() {
            if e.timestamp < t {
                refs.push((e.timestamp, EntryRef { sensor: c, store: StoreKind::Working, index: i }));
            }
        }
        for (i, e) in own.long_term.iter().enumerate() {
            if e.timestamp < t {
                refs.push((e.timestamp, EntryRef { sensor: c, store: StoreKind::LongTerm, index: i }));
            }
        }
        if refs.is_empty() {
            return Vec::new();
        }
        let newest = refs.iter().map(|(ts, _)| *ts).max().unwrap();
        let reference: Vec<&MemoryEntry> = refs
            .iter()
            .filter(|(ts, _)| *ts == newest)
            .map(|(_, r)| self.entry(*r))
            .collect();

        let mut frames: Vec<u64> = refs.iter().map(|(ts, _)| *ts).collect();
        frames.sort_unstable();
        frames.dedup();
        let mut scored: Vec<(f64, u64)> = frames
            .iter()
            .map(|&ts| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for (ets, r) in &refs {
                    if *ets != ts {
                        continue;
                    }
                    let e = self.entry(*r);
                    for re in &reference {
                        sum += cosine_similarity(&e.key, &re.key);
                        count += 1;
                    }
                }
                (sum / count.max(1) as f64, ts)
            })
            .collect();
        // Highest similarity first; ties keep the newer frame.
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        let keep: Vec<u64> = scored
            .iter()
            .take(self.config.working_frames)
            .map(|(_, ts)| *ts)
            .collect();
        refs.into_iter()
            .filter(|(ts, _)| keep.contains(ts))
            .map(|(_, r)| r)
            .collect()
    }

    /// Scaled dot-product attention of `queries` over the selected
    /// entries, with the skip connection added back.
    ///
    /// Each selected entry's accumulated attention grows by its mean
    /// attention mass over the query tokens. An empty selection returns
    /// the queries unchanged.
    pub fn attend(&mut self, queries: &TokenGrid, selection: &[EntryRef]) -> Result<TokenGrid> {
        let dim = self.config.token_dim;
        if queries.dim != dim {
            return Err(Error::DimensionMismatch(format!(
                "query dim {} does not match pool dim {dim}",
                queries.dim
            )));
        }
        if selection.is_empty() {
            return Ok(queries.clone());
        }
        for r in selection {
            let e = self.entry(*r);
            if e.key.len() != dim || e.value.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "entry dim {} does not match pool dim {dim}",
                    e.key.len()
                )));
            }
        }

        let keys: Vec<&[f64]> = selection.iter().map(|r| self.entry(*r).key.as_slice()).collect();
        let values: Vec<&[f64]> =
            selection.iter().map(|r| self.entry(*r).value.as_slice()).collect();
        let (out, masses) = attend_tokens(queries, &keys, &values);
        for (r, mass) in selection.iter().zip(masses) {
            self.entry_mut(*r).accumulated_attention += mass;
        }
        Ok(out)
    }
}

/// Dense softmax attention over explicit key/value slices.
///
/// Returns the updated tokens (`softmax(q Kᵀ / √dim) V + q`) and the mean
/// attention mass per entry, averaged over query tokens.
pub fn attend_tokens(
    queries: &TokenGrid,
    keys: &[&[f64]],
    values: &[&[f64]],
) -> (TokenGrid, Vec<f64>) {
    let dim = queries.dim;
    let scale = 1.0 / (dim as f64).sqrt();
    let n_entries = keys.len();
    let mut out = queries.clone();
    let mut masses = vec![0.0; n_entries];
    if n_entries == 0 {
        return (out, masses);
    }
    let mut logits = vec![0.0; n_entries];
    for qi in 0..queries.len() {
        let q = queries.token(qi);
        let mut max_logit = f64::NEG_INFINITY;
        for (j, k) in keys.iter().enumerate() {
            let mut dot = 0.0;
            for d in 0..dim {
                dot += q[d] * k[d];
            }
            logits[j] = dot * scale;
            max_logit = max_logit.max(logits[j]);
        }
        let mut denom = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max_logit).exp();
            denom += *l;
        }
        let token = out.token_mut(qi);
        for (j, v) in values.iter().enumerate() {
            let a = logits[j] / denom;
            masses[j] += a;
            for d in 0..dim {
                token[d] += a * v[d];
            }
        }
    }
    let nq = queries.len() as f64;
    for m in &mut masses {
        *m /= nq;
    }
    (out, masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn entry(key: Vec<f64>, value: Vec<f64>, t: u64) -> MemoryEntry {
        MemoryEntry { key, value, timestamp: t, sensor: 0, accumulated_attention: 0.0 }
    }

    fn rand_token(rng: &mut StdRng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn small_cfg() -> PoolConfig {
        PoolConfig { token_dim: 8, ..Default::default() }
    }

    #[test]
    fn attend_on_empty_pool_is_identity() {
        let mut set = PoolSet::new(1, small_cfg(), vec![vec![]]);
        let q = TokenGrid::from_tokens(2, 2, 8, (0..32).map(|i| i as f64).collect()).unwrap();
        let sel = set.select_related(0, 0, Stage::Temporal);
        assert!(sel.is_empty());
        let out = set.attend(&q, &sel).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn attend_with_zero_values_is_identity() {
        let mut set = PoolSet::new(1, small_cfg(), vec![vec![]]);
        let mut rng = StdRng::seed_from_u64(0);
        let e = entry(rand_token(&mut rng, 8), vec![0.0; 8], 0);
        set.pool_mut(0).insert(vec![e], 0, &small_cfg()).unwrap();
        let q = TokenGrid::from_tokens(1, 3, 8, (0..24).map(|i| (i as f64).sin()).collect()).unwrap();
        let sel = set.select_related(1, 0, Stage::Temporal);
        assert_eq!(sel.len(), 1);
        let out = set.attend(&q, &sel).unwrap();
        for i in 0..24 {
            assert!((out.data[i] - q.data[i]).abs() < 1e-15);
        }
        // A single entry soaks up all attention: mean mass 1 per call.
        assert!((set.pool(0).working()[0].accumulated_attention - 1.0).abs() < 1e-12);
    }

    /// Brute-force attention oracle written independently of the
    /// implementation path: explicit row softmax, no shared helpers.
    fn dense_attention_oracle(
        q: &TokenGrid,
        entries: &[(Vec<f64>, Vec<f64>)],
    ) -> (Vec<f64>, Vec<f64>) {
        let dim = q.dim;
        let mut out = Vec::with_capacity(q.len() * dim);
        let mut masses = vec![0.0; entries.len()];
        for qi in 0..q.len() {
            let qt = q.token(qi);
            let logits: Vec<f64> = entries
                .iter()
                .map(|(k, _)| {
                    qt.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (dim as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for d in 0..dim {
                let mut acc = qt[d];
                for (j, (_, v)) in entries.iter().enumerate() {
                    acc += exps[j] / z * v[d];
                }
                out.push(acc);
            }
            for (j, e) in exps.iter().enumerate() {
                masses[j] += e / z;
            }
        }
        for m in &mut masses {
            *m /= q.len() as f64;
        }
        (out, masses)
    }

    #[test]
    fn attend_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        let entries: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
            .map(|_| (rand_token(&mut rng, 8), rand_token(&mut rng, 8)))
            .collect();
        let q = TokenGrid::from_tokens(
            2,
            2,
            8,
            (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let keys: Vec<&[f64]> = entries.iter().map(|(k, _)| k.as_slice()).collect();
        let values: Vec<&[f64]> = entries.iter().map(|(_, v)| v.as_slice()).collect();
        let (out, masses) = attend_tokens(&q, &keys, &values);
        let (oracle_out, oracle_masses) = dense_attention_oracle(&q, &entries);
        for i in 0..out.data.len() {
            assert!((out.data[i] - oracle_out[i]).abs() < 1e-12);
        }
        for j in 0..masses.len() {
            assert!((masses[j] - oracle_masses[j]).abs() < 1e-12);
        }
        // Softmax rows sum to one, so per-call masses sum to one.
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn insert_gates_against_long_term_keys() {
        let cfg = PoolConfig { token_dim: 4, working_frames: 1, ..Default::default() };
        let mut pool = SensorPool::new(0);
        let k1 = vec![1.0, 0.0, 0.0, 0.0];
        let k2 = vec![0.0, 1.0, 0.0, 0.0];

        // Empty pool keeps everything.
        let s = pool.insert(vec![entry(k1.clone(), k1.clone(), 0)], 0, &cfg).unwrap();
        assert_eq!((s.kept, s.discarded), (1, 0));
        assert_eq!(pool.len(), 1);

        // Second frame rolls the first into long-term (W = 1).
        let s = pool.insert(vec![entry(k2.clone(), k2.clone(), 1)], 1, &cfg).unwrap();
        assert_eq!((s.kept, s.migrated), (1, 1));
        assert_eq!(pool.long_term().len(), 1);

        // Identical key to a long-term entry is discarded.
        let s = pool.insert(vec![entry(k1.clone(), k1.clone(), 2)], 2, &cfg).unwrap();
        assert_eq!((s.kept, s.discarded), (0, 1));

        // Orthogonal key passes the gate.
        let k3 = vec![0.0, 0.0, 1.0, 0.0];
        let s = pool.insert(vec![entry(k3, k1.clone(), 3)], 3, &cfg).unwrap();
        assert_eq!((s.kept, s.discarded), (1, 0));

        assert!(pool.is_chronological());
    }

    #[test]
    fn out_of_order_insert_is_rejected() {
        let cfg = small_cfg();
        let mut pool = SensorPool::new(0);
        pool.insert(vec![entry(vec![1.0; 8], vec![0.0; 8], 5)], 5, &cfg).unwrap();
        let err = pool.insert(vec![entry(vec![0.5; 8], vec![0.0; 8], 3)], 3, &cfg);
        assert!(matches!(err, Err(Error::OutOfOrderTimestamp { inserted: 3, newest: 5 })));
    }

    #[test]
    fn prune_drops_lowest_attention_with_age_tiebreak() {
        let cfg = PoolConfig { token_dim: 2, long_term_capacity: 4, ..Default::default() };
        let mut pool = SensorPool::new(0);
        for (i, (t, acc)) in [(0u64, 0.0), (1, 0.5), (2, 0.0), (3, 2.0), (4, 1.0), (5, 0.0), (6, 3.0)]
            .iter()
            .enumerate()
        {
            pool.long_term.push(MemoryEntry {
                key: vec![i as f64, 0.0],
                value: vec![0.0, 0.0],
                timestamp: *t,
                sensor: 0,
                accumulated_attention: *acc,
            });
        }
        // Capacity 4, size 7: the three zero-attention entries go first.
        let removed = pool.prune(&cfg);
        assert_eq!(removed, 3);
        let remaining: Vec<u64> = pool.long_term().iter().map(|e| e.timestamp).collect();
        assert_eq!(remaining, vec![1, 3, 4, 6]);
        // At capacity, prune is a no-op.
        assert_eq!(pool.prune(&cfg), 0);
    }

    #[test]
    fn prune_matches_brute_force_top_k() {
        let mut rng = StdRng::seed_from_u64(21);
        let cfg = PoolConfig { token_dim: 2, long_term_capacity: 16, ..Default::default() };
        let mut pool = SensorPool::new(0);
        let mut oracle: Vec<(f64, u64, usize)> = Vec::new();
        for i in 0..40 {
            let acc = (rng.random_range(0..8) as f64) * 0.25;
            let t = (i / 3) as u64;
            pool.long_term.push(MemoryEntry {
                key: vec![i as f64, 0.0],
                value: vec![0.0, 0.0],
                timestamp: t,
                sensor: 0,
                accumulated_attention: acc,
            });
            oracle.push((acc, t, i));
        }
        pool.prune(&cfg);
        // Brute-force oracle: sort descending by (attention, recency,
        // insertion index) and keep the top capacity.
        oracle.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
        });
        let mut expect: Vec<usize> = oracle.iter().take(16).map(|(_, _, i)| *i).collect();
        expect.sort_unstable();
        let mut got: Vec<usize> = pool.long_term().iter().map(|e| e.key[0] as usize).collect();
        got.sort_unstable();
        assert_eq!(got, expect);
    }

    #[test]
    fn selection_windows_and_stages() {
        let cfg = PoolConfig { token_dim: 2, working_frames: 2, ..Default::default() };
        let adjacency = vec![vec![1], vec![0]];
        let mut set = PoolSet::new(2, cfg.clone(), adjacency);
        for t in 0..8u64 {
            for c in 0..2 {
                let cfg = set.config.clone();
                set.pool_mut(c)
                    .insert(vec![entry(vec![t as f64 + 1.0, c as f64], vec![0.0, 0.0], t)], t, &cfg)
                    .unwrap();
            }
        }
        // Temporal: the whole own pool, nothing from the other sensor.
        let sel = set.select_related(8, 0, Stage::Temporal);
        assert_eq!(sel.len(), 8);
        assert!(sel.iter().all(|r| r.sensor == 0));

        // Earlier than any stored entry: empty.
        assert!(set.select_related(0, 0, Stage::Temporal).is_empty());

        // Spatial: neighbor entries within the 4-step lookback window
        // (timestamps 4..7) plus own most-similar working frames.
        let sel = set.select_related(8, 0, Stage::Spatial);
        let neighbor: Vec<u64> = sel
            .iter()
            .filter(|r| r.sensor == 1)
            .map(|r| set.entry(*r).timestamp)
            .collect();
        assert_eq!(neighbor.len(), 4);
        assert!(neighbor.iter().all(|&t| (4..8).contains(&t)));
        let own: Vec<&EntryRef> = sel.iter().filter(|r| r.sensor == 0).collect();
        assert_eq!(own.len(), cfg.working_frames);
    }

    #[test]
    fn capacity_invariants_hold_under_random_interleaving() {
        let mut rng = StdRng::seed_from_u64(33);
        let cfg = PoolConfig {
            token_dim: 4,
            working_frames: 3,
            long_term_capacity: 12,
            similarity_threshold: 0.95,
            related_timestamps: 4,
        };
        let mut set = PoolSet::new(1, cfg.clone(), vec![vec![]]);
        let mut t = 0u64;
        for _ in 0..500 {
            match rng.random_range(0..3) {
                0 => {
                    let n = rng.random_range(1..4);
                    let entries: Vec<MemoryEntry> =
                        (0..n).map(|_| entry(rand_token(&mut rng, 4), rand_token(&mut rng, 4), t)).collect();
                    let cfg = set.config.clone();
                    set.pool_mut(0).insert(entries, t, &cfg).unwrap();
                    t += rng.random_range(0..2) as u64;
                }
                1 => {
                    let q = TokenGrid::from_tokens(1, 2, 4, rand_token(&mut rng, 8)).unwrap();
                    let sel = set.select_related(t, 0, Stage::Temporal);
                    set.attend(&q, &sel).unwrap();
                }
                _ => {
                    let cfg = set.config.clone();
                    set.pool_mut(0).prune(&cfg);
                }
            }
            let pool = set.pool(0);
            assert!(pool.long_term().len() <= cfg.long_term_capacity);
            assert!(pool.working_timestamps().len() <= cfg.working_frames);
            assert!(pool.is_chronological());
            assert!(pool
                .working()
                .iter()
                .chain(pool.long_term())
                .all(|e| e.accumulated_attention >= 0.0));
        }
    }
}

use crate::error::Result;
use crate::geometry::Pointmap;
use crate::synth::GrayImage;

use super::backbone::Backbone;
use super::pool::{InsertStats, MemoryEntry, PoolSet, Stage};
use super::{ConfidenceMap, TokenGrid};

/// Timestamp index and sensor of one streamed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub t_idx: usize,
    pub sensor: usize,
}

/// Output of one streaming step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub pointmap: Pointmap,
    pub confidence: ConfidenceMap,
    pub insert: InsertStats,
    /// Entries the attention read this step; the streaming-cost bound.
    pub attended_entries: usize,
}

#[derive(Default)]
struct SensorState {
    prev_encoded: Option<TokenGrid>,
    prev_target: Option<TokenGrid>,
}

/// Drives a backbone over multi-sensor frame streams against a pool set.
///
/// Per frame: encode, attend over the related pool entries, decode the
/// (updated, previous-frame) pair, regress the pointmap and confidence,
/// encode memory, insert. Queries come from the previous step's
/// target-decoded feature; the first frame queries with its encoded
/// feature directly. Entries inserted at timestamp t are never selected
/// at t, which keeps reads and writes of a timestamp disjoint regardless
/// of the per-timestamp sensor order.
pub struct StreamEngine<B: Backbone> {
    pub backbone: B,
    pub pools: PoolSet,
    pub stage: Stage,
    states: Vec<SensorState>,
}

impl<B: Backbone> StreamEngine<B> {
    pub fn new(backbone: B, pools: PoolSet, stage: Stage) -> Self {
        let n = pools.pools().len();
        Self {
            backbone,
            pools,
            stage,
            states: (0..n).map(|_| SensorState::default()).collect(),
        }
    }

    pub fn step(&mut self, image: &GrayImage, frame: FrameRef) -> Result<StepOutput> {
        let encoded = self.backbone.encode(image, frame);
        let queries = match &self.states[frame.sensor].prev_target {
            Some(prev) => self.backbone.query_head(prev, frame),
            None => encoded.clone(),
        };

        let selection = self
            .pools
            .select_related(frame.t_idx as u64, frame.sensor, self.stage);
        let attended_entries = selection.len();
        let updated = self.pools.attend(&queries, &selection)?;

        let reference = self.states[frame.sensor]
            .prev_encoded
            .clone()
            .unwrap_or_else(|| encoded.clone());
        let (f_tar, f_ref) = self.backbone.decode(&updated, &reference, frame);
        let (pointmap, confidence) = self.backbone.point_head(&f_ref, frame);
        let (keys, values) = self.backbone.memory_encode(&f_ref, &encoded, &pointmap, frame);

        let entries: Vec<MemoryEntry> = (0..keys.len())
            .map(|i| MemoryEntry {
                key: keys.token(i).to_vec(),
                value: values.token(i).to_vec(),
                timestamp: frame.t_idx as u64,
                sensor: frame.sensor,
                accumulated_attention: 0.0,
            })
            .collect();
        let cfg = self.pools.config.clone();
        let insert = self
            .pools
            .pool_mut(frame.sensor)
            .insert(entries, frame.t_idx as u64, &cfg)?;

        let state = &mut self.states[frame.sensor];
        state.prev_encoded = Some(encoded);
        state.prev_target = Some(f_tar);

        Ok(StepOutput { pointmap, confidence, insert, attended_entries })
    }
}

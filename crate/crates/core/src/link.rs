//! Decision-window simulation of N vehicles streaming compressed LiDAR
//! frames over a shared uplink.
//!
//! Time advances in scheduler ticks equal to the channel-trace sample
//! interval. Each tick the available subcarriers are split equally among
//! vehicles with a non-empty buffer and a usable MCS. Frames are cut into
//! segments; a segment sent while the actual SINR sits below the threshold of
//! the MCS picked from stale channel state is lost and retried once after a
//! fixed turnaround. A second loss, or a frame older than the queue budget,
//! drops the whole frame.
//!
//! Delays are measured per delivered frame at three cumulative points:
//! RLC (last first-attempt completion), PDCP (last in-order delivery) and
//! APP (PDCP plus encoder time and reassembly, counted from frame capture).

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{sinr_to_mcs, ChannelTrace, McsTable};
use crate::compression::{compressed_frame_size, CompressionConfig, SizeModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub tx_power_dbm: f64,
    /// Parallel MIMO layers multiplying the per-subcarrier rate.
    pub spatial_layers: u32,
    pub frame_rate: f64,
    pub points_per_frame: u64,
    /// Relative standard deviation of the per-frame point count.
    pub points_jitter: f64,
    pub decision_interval: f64,
    pub d_kpi: f64,
    /// Scheduler slot; must equal the channel-trace sample interval.
    pub tick: f64,
    /// Fraction of resource elements spent on cyclic prefix, control and reference signals.
    pub resource_overhead: f64,
    pub segment_bytes: u64,
    /// Age (in ticks) of the SINR sample the scheduler adapts the MCS to.
    pub csi_delay_ticks: usize,
    pub csi_backoff_db: f64,
    pub retx_turnaround: f64,
    pub propagation_delay: f64,
    pub reassembly_delay: f64,
    pub queue_budget: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 50e6,
            subcarrier_spacing_hz: 120e3,
            tx_power_dbm: 28.0,
            spatial_layers: 2,
            frame_rate: 30.0,
            points_per_frame: 82_200,
            points_jitter: 0.05,
            decision_interval: 0.1,
            d_kpi: 0.050,
            tick: 0.001,
            resource_overhead: 0.25,
            segment_bytes: 9_000,
            csi_delay_ticks: 1,
            csi_backoff_db: 1.0,
            retx_turnaround: 0.004,
            propagation_delay: 0.0005,
            reassembly_delay: 0.0005,
            queue_budget: 0.2,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("link.bandwidth_hz", self.bandwidth_hz),
            ("link.subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("link.frame_rate", self.frame_rate),
            ("link.decision_interval", self.decision_interval),
            ("link.d_kpi", self.d_kpi),
            ("link.tick", self.tick),
            ("link.queue_budget", self.queue_budget),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("link.points_jitter", self.points_jitter),
            ("link.csi_backoff_db", self.csi_backoff_db),
            ("link.retx_turnaround", self.retx_turnaround),
            ("link.propagation_delay", self.propagation_delay),
            ("link.reassembly_delay", self.reassembly_delay),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.resource_overhead) {
            return Err(Error::config("link.resource_overhead", "must lie in [0, 1)"));
        }
        if self.points_per_frame == 0 {
            return Err(Error::config("link.points_per_frame", "must be positive"));
        }
        if self.spatial_layers == 0 {
            return Err(Error::config("link.spatial_layers", "must be positive"));
        }
        if self.segment_bytes == 0 {
            return Err(Error::config("link.segment_bytes", "must be positive"));
        }
        if self.decision_interval * self.frame_rate < 1.0 - 1e-9 {
            return Err(Error::config(
                "link.decision_interval",
                "a decision window must contain at least one frame",
            ));
        }
        let ratio = self.decision_interval / self.tick;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::config(
                "link.tick",
                "decision_interval must be a whole number of ticks",
            ));
        }
        Ok(())
    }

    pub fn ticks_per_window(&self) -> usize {
        (self.decision_interval / self.tick).round() as usize
    }

    pub fn total_subcarriers(&self) -> f64 {
        (self.bandwidth_hz / self.subcarrier_spacing_hz).floor()
    }

    /// Bytes one tick carries over `subcarriers` at `spectral_efficiency`.
    fn tick_bytes(&self, spectral_efficiency: f64, subcarriers: f64) -> f64 {
        spectral_efficiency
            * f64::from(self.spatial_layers)
            * subcarriers
            * self.subcarrier_spacing_hz
            * (1.0 - self.resource_overhead)
            * self.tick
            / 8.0
    }
}

/// avg / min / max / population standard deviation of one delay layer, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerStats {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl LayerStats {
    pub fn from_samples(samples: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = samples.clone().count();
        if n == 0 {
            return None;
        }
        let (min, max) = samples
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        // Clamp rounding so that min <= avg <= max holds exactly.
        let avg = (samples.clone().sum::<f64>() / n as f64).clamp(min, max);
        let std = if min == max {
            0.0
        } else {
            (samples.map(|x| (x - avg) * (x - avg)).sum::<f64>() / n as f64).sqrt()
        };
        Some(Self { avg, min, max, std })
    }

    pub fn constant(d: f64) -> Self {
        Self {
            avg: d,
            min: d,
            max: d,
            std: 0.0,
        }
    }
}

/// Per-layer delays of one delivered frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDelays {
    pub seq: u64,
    pub gen_time: f64,
    pub bytes: u64,
    pub rlc: f64,
    pub pdcp: f64,
    pub app: f64,
}

/// Observation of one vehicle over one decision window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub avg_sinr: f64,
    pub avg_mcs_symbols: f64,
    pub avg_subcarriers: f64,
    pub rlc: LayerStats,
    pub pdcp: LayerStats,
    pub app: LayerStats,
    pub prr_rlc: f64,
    pub prr_pdcp: f64,
    pub prr_app: f64,
    /// Frames completed during the window, in completion order.
    pub frames: Vec<FrameDelays>,
    pub frames_generated: u64,
    pub frames_dropped: u64,
}

impl WindowStats {
    pub fn delivered(&self) -> usize {
        self.frames.len()
    }

    /// Mean APP delay of delivered frames, or `None` when nothing arrived.
    pub fn mean_app_delay(&self) -> Option<f64> {
        (!self.frames.is_empty()).then_some(self.app.avg)
    }
}

/// Lifetime frame accounting of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_system: u64,
}

#[derive(Debug, Clone)]
struct Frame {
    seq: u64,
    gen_time: f64,
    enqueue_time: f64,
    bytes: u64,
    segments: u32,
    next_fresh: u32,
    delivered: u32,
    rlc_done: f64,
    pdcp_done: f64,
}

impl Frame {
    fn segment_len(&self, segment: u32, segment_bytes: u64) -> f64 {
        if segment + 1 < self.segments {
            segment_bytes as f64
        } else {
            (self.bytes - u64::from(self.segments - 1) * segment_bytes) as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Retx {
    seq: u64,
    segment: u32,
    ready: f64,
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    seq: u64,
    segment: u32,
    remaining: f64,
    retx: bool,
    corrupted: bool,
}

#[derive(Debug, Default)]
struct WindowAcc {
    sinr_sum: f64,
    mcs_sum: f64,
    subcarrier_sum: f64,
    rlc_attempts: u64,
    rlc_ok: u64,
    pdcp_ok: u64,
    pdcp_failed: u64,
    dropped: u64,
    generated: u64,
    frames: Vec<FrameDelays>,
}

#[derive(Debug, Clone, Default)]
struct VehicleLink {
    compressing: VecDeque<Frame>,
    queue: VecDeque<Frame>,
    retx: VecDeque<Retx>,
    in_service: Option<Unit>,
    next_seq: u64,
    counters: FrameCounters,
}

impl VehicleLink {
    fn has_backlog(&self, now: f64) -> bool {
        self.in_service.is_some()
            || self.retx.front().is_some_and(|r| r.ready <= now)
            || self.queue.iter().any(|f| f.next_fresh < f.segments)
    }

    fn drop_frame(&mut self, seq: u64, acc: &mut WindowAcc) {
        if let Some(pos) = self.queue.iter().position(|f| f.seq == seq) {
            self.queue.remove(pos);
        }
        self.retx.retain(|r| r.seq != seq);
        if self.in_service.is_some_and(|u| u.seq == seq) {
            self.in_service = None;
        }
        self.counters.dropped += 1;
        acc.dropped += 1;
    }

    fn next_unit(&mut self, now: f64, segment_bytes: u64) -> Option<Unit> {
        if self.retx.front().is_some_and(|r| r.ready <= now) {
            let r = self.retx.pop_front()?;
            let frame = self.queue.iter().find(|f| f.seq == r.seq)?;
            return Some(Unit {
                seq: r.seq,
                segment: r.segment,
                remaining: frame.segment_len(r.segment, segment_bytes),
                retx: true,
                corrupted: false,
            });
        }
        let frame = self.queue.iter_mut().find(|f| f.next_fresh < f.segments)?;
        let segment = frame.next_fresh;
        frame.next_fresh += 1;
        Some(Unit {
            seq: frame.seq,
            segment,
            remaining: frame.segment_len(segment, segment_bytes),
            retx: false,
            corrupted: false,
        })
    }

    fn deliver(&mut self, seq: u64, at: f64, params: &LinkParams, acc: &mut WindowAcc) {
        acc.pdcp_ok += 1;
        let Some(pos) = self.queue.iter().position(|f| f.seq == seq) else {
            return;
        };
        let frame = &mut self.queue[pos];
        frame.delivered += 1;
        frame.pdcp_done = frame.pdcp_done.max(at);
        if frame.delivered == frame.segments {
            let frame = self.queue.remove(pos).expect("position is valid");
            let pdcp = frame.pdcp_done - frame.enqueue_time;
            acc.frames.push(FrameDelays {
                seq: frame.seq,
                gen_time: frame.gen_time,
                bytes: frame.bytes,
                rlc: frame.rlc_done - frame.enqueue_time,
                pdcp,
                app: frame.pdcp_done + params.reassembly_delay - frame.gen_time,
            });
            self.counters.delivered += 1;
        }
    }

    /// Serves up to `capacity` bytes during the tick starting at `now`.
    fn serve(&mut self, now: f64, capacity: f64, channel_ok: bool, params: &LinkParams, acc: &mut WindowAcc) {
        let mut used = 0.0;
        while capacity - used > 1e-9 {
            let mut unit = match self.in_service.take() {
                Some(u) => u,
                None => match self.next_unit(now, params.segment_bytes) {
                    Some(u) => u,
                    None => break,
                },
            };
            let take = unit.remaining.min(capacity - used);
            unit.remaining -= take;
            used += take;
            unit.corrupted |= !channel_ok;
            if unit.remaining > 1e-9 {
                self.in_service = Some(unit);
                break;
            }
            let done = now + used / capacity * params.tick + params.propagation_delay;
            self.complete(unit, done, params, acc);
        }
    }

    fn complete(&mut self, unit: Unit, at: f64, params: &LinkParams, acc: &mut WindowAcc) {
        if unit.retx {
            if unit.corrupted {
                acc.pdcp_failed += 1;
                self.drop_frame(unit.seq, acc);
            } else {
                self.deliver(unit.seq, at, params, acc);
            }
            return;
        }
        acc.rlc_attempts += 1;
        if let Some(frame) = self.queue.iter_mut().find(|f| f.seq == unit.seq) {
            frame.rlc_done = frame.rlc_done.max(at);
        }
        if unit.corrupted {
            self.retx.push_back(Retx {
                seq: unit.seq,
                segment: unit.segment,
                ready: at + params.retx_turnaround,
            });
        } else {
            acc.rlc_ok += 1;
            self.deliver(unit.seq, at, params, acc);
        }
    }
}

/// Multi-vehicle uplink whose buffers persist across decision windows.
#[derive(Debug, Clone)]
pub struct LinkSimulator {
    params: LinkParams,
    mcs: McsTable,
    size_model: SizeModel,
    vehicles: Vec<VehicleLink>,
    window: u64,
}

impl LinkSimulator {
    pub fn new(params: LinkParams, mcs: McsTable, size_model: SizeModel, n_vehicles: usize) -> Result<Self> {
        params.validate()?;
        size_model.validate()?;
        if n_vehicles == 0 {
            return Err(Error::config("experiment.n_vehicles", "must be positive"));
        }
        Ok(Self {
            params,
            mcs,
            size_model,
            vehicles: vec![VehicleLink::default(); n_vehicles],
            window: 0,
        })
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Index of the next window to simulate.
    pub fn window_index(&self) -> u64 {
        self.window
    }

    /// Empties every buffer and rewinds to window 0.
    pub fn reset(&mut self) {
        let n = self.vehicles.len();
        self.vehicles = vec![VehicleLink::default(); n];
        self.window = 0;
    }

    pub fn counters(&self, vehicle: usize) -> FrameCounters {
        let v = &self.vehicles[vehicle];
        FrameCounters {
            in_system: (v.compressing.len() + v.queue.len()) as u64,
            ..v.counters
        }
    }

    /// Advances one decision window. Window `w` covers trace samples
    /// `[w * ticks_per_window, (w + 1) * ticks_per_window)`.
    pub fn simulate_window<R: Rng + ?Sized>(
        &mut self,
        actions: &[CompressionConfig],
        trace: &ChannelTrace,
        rng: &mut R,
    ) -> Result<Vec<WindowStats>> {
        let n = self.vehicles.len();
        if actions.len() != n {
            return Err(Error::Simulation(format!(
                "{} actions for {n} vehicles",
                actions.len()
            )));
        }
        if trace.n_vehicles() != n {
            return Err(Error::Simulation(format!(
                "trace has {} vehicles, simulator {n}",
                trace.n_vehicles()
            )));
        }
        if (trace.sample_interval() - self.params.tick).abs() > 1e-12 {
            return Err(Error::Simulation(format!(
                "trace interval {} differs from scheduler tick {}",
                trace.sample_interval(),
                self.params.tick
            )));
        }
        let tpw = self.params.ticks_per_window();
        let first_tick = self.window as usize * tpw;
        if trace.len() < first_tick + tpw {
            return Err(Error::Simulation(format!(
                "trace has {} samples, window {} needs {}",
                trace.len(),
                self.window,
                first_tick + tpw
            )));
        }

        let mut acc: Vec<WindowAcc> = (0..n).map(|_| WindowAcc::default()).collect();
        self.generate_frames(actions, &mut acc, rng)?;

        let p = &self.params;
        let total_sc = p.total_subcarriers();
        let mut scheduled: Vec<Option<(f64, f64)>> = vec![None; n];
        for k in first_tick..first_tick + tpw {
            let now = k as f64 * p.tick;
            for (v, veh) in self.vehicles.iter_mut().enumerate() {
                while veh.compressing.front().is_some_and(|f| f.enqueue_time <= now) {
                    let f = veh.compressing.pop_front().expect("front exists");
                    veh.queue.push_back(f);
                }
                while let Some(f) = veh.queue.front() {
                    if now - f.gen_time <= p.queue_budget {
                        break;
                    }
                    let seq = f.seq;
                    veh.drop_frame(seq, &mut acc[v]);
                }
            }
            let mut active = 0usize;
            for (v, veh) in self.vehicles.iter().enumerate() {
                let samples = trace.vehicle(v);
                let predicted = samples[k.saturating_sub(p.csi_delay_ticks)] - p.csi_backoff_db;
                let mcs = sinr_to_mcs(predicted, &self.mcs);
                acc[v].sinr_sum += samples[k];
                acc[v].mcs_sum += mcs.map_or(0.0, |m| f64::from(m.modulation_symbols));
                scheduled[v] = match mcs {
                    Some(m) if veh.has_backlog(now) => {
                        active += 1;
                        Some((m.spectral_efficiency, m.min_sinr))
                    }
                    _ => None,
                };
            }
            if active == 0 {
                continue;
            }
            let share = total_sc / active as f64;
            for (v, veh) in self.vehicles.iter_mut().enumerate() {
                if let Some((se, threshold)) = scheduled[v] {
                    acc[v].subcarrier_sum += share;
                    let ok = trace.vehicle(v)[k] >= threshold;
                    veh.serve(now, p.tick_bytes(se, share), ok, p, &mut acc[v]);
                }
            }
        }
        self.window += 1;
        Ok(acc.into_iter().map(|a| self.finish(a, tpw)).collect())
    }

    fn generate_frames<R: Rng + ?Sized>(
        &mut self,
        actions: &[CompressionConfig],
        acc: &mut [WindowAcc],
        rng: &mut R,
    ) -> Result<()> {
        let p = &self.params;
        let window_end = (self.window + 1) as f64 * p.decision_interval;
        let frames_end = (window_end * p.frame_rate - 1e-9).ceil() as u64;
        for (v, veh) in self.vehicles.iter_mut().enumerate() {
            let config = &actions[v];
            while veh.next_seq < frames_end {
                let seq = veh.next_seq;
                veh.next_seq += 1;
                let jitter: f64 = if p.points_jitter > 0.0 {
                    rng.sample::<f64, _>(StandardNormal) * p.points_jitter
                } else {
                    0.0
                };
                let points = ((p.points_per_frame as f64) * (1.0 + jitter)).round().max(1.0) as u64;
                let bytes = compressed_frame_size(config, points, &self.size_model)?;
                let gen_time = seq as f64 / p.frame_rate;
                let frame = Frame {
                    seq,
                    gen_time,
                    enqueue_time: gen_time + config.compression_time(),
                    bytes,
                    segments: bytes.div_ceil(p.segment_bytes) as u32,
                    next_fresh: 0,
                    delivered: 0,
                    rlc_done: f64::NEG_INFINITY,
                    pdcp_done: f64::NEG_INFINITY,
                };
                let pos = veh
                    .compressing
                    .partition_point(|f| f.enqueue_time <= frame.enqueue_time);
                veh.compressing.insert(pos, frame);
                veh.counters.generated += 1;
                acc[v].generated += 1;
            }
        }
        Ok(())
    }

    fn finish(&self, acc: WindowAcc, ticks: usize) -> WindowStats {
        let ticks = ticks as f64;
        let sentinel = LayerStats::constant(self.params.decision_interval);
        let delivered = !acc.frames.is_empty();
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let layer = |f: fn(&FrameDelays) -> f64| {
            LayerStats::from_samples(acc.frames.iter().map(f)).unwrap_or(sentinel)
        };
        WindowStats {
            avg_sinr: acc.sinr_sum / ticks,
            avg_mcs_symbols: acc.mcs_sum / ticks,
            avg_subcarriers: acc.subcarrier_sum / ticks,
            rlc: layer(|f| f.rlc),
            pdcp: layer(|f| f.pdcp),
            app: layer(|f| f.app),
            prr_rlc: if delivered { ratio(acc.rlc_ok, acc.rlc_attempts) } else { 0.0 },
            prr_pdcp: if delivered { ratio(acc.pdcp_ok, acc.pdcp_ok + acc.pdcp_failed) } else { 0.0 },
            prr_app: if delivered {
                ratio(acc.frames.len() as u64, acc.frames.len() as u64 + acc.dropped)
            } else {
                0.0
            },
            frames_generated: acc.generated,
            frames_dropped: acc.dropped,
            frames: acc.frames,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::McsEntry;
    use crate::compression::CompressionTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_trace(n: usize, samples: usize, sinr: f64) -> ChannelTrace {
        ChannelTrace::new(0.0, 0.001, vec![vec![sinr; samples]; n]).unwrap()
    }

    fn config(label: &str) -> CompressionConfig {
        CompressionTable::default().by_label(label).unwrap().clone()
    }

    #[test]
    fn uncongested_single_vehicle() {
        let params = LinkParams {
            points_jitter: 0.0,
            ..LinkParams::default()
        };
        let mut sim = LinkSimulator::new(params.clone(), McsTable::default(), SizeModel::default(), 1).unwrap();
        let trace = flat_trace(1, 100, 30.0);
        let action = config("10-00");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = sim.simulate_window(&[action.clone()], &trace, &mut rng).unwrap();
        let w = &stats[0];
        assert_eq!(w.frames_generated, 3);
        assert_eq!(w.delivered(), 3);
        assert_eq!((w.prr_rlc, w.prr_pdcp, w.prr_app), (1.0, 1.0, 1.0));
        let top = McsTable::default().entries().last().unwrap().spectral_efficiency;
        let capacity = params.tick_bytes(top, params.total_subcarriers()) / params.tick;
        let bytes = compressed_frame_size(&action, params.points_per_frame, &SizeModel::default()).unwrap();
        let ideal = action.compression_time() + bytes as f64 / capacity;
        let slack = params.tick + params.propagation_delay + params.reassembly_delay;
        for f in &w.frames {
            assert!(f.app >= ideal - 1e-12, "{} < {ideal}", f.app);
            assert!(f.app <= ideal + slack + 1e-12, "{} > {}", f.app, ideal + slack);
        }
    }

    /// FIFO single server with rate `capacity`; service may start only on a
    /// tick boundary at or after enqueue, or immediately when the server frees.
    fn fifo_oracle(enqueue: &[f64], bytes: f64, capacity: f64, tick: f64) -> Vec<f64> {
        let mut free = 0.0f64;
        let mut done = Vec::new();
        for &e in enqueue {
            let ready = (e / tick - 1e-9).ceil() * tick;
            let start = ready.max(free);
            free = start + bytes / capacity;
            done.push(free);
        }
        done
    }

    #[test]
    fn queue_grows_at_half_capacity() {
        let action = config("10-00");
        let bytes = compressed_frame_size(&action, 82_200, &SizeModel::default()).unwrap() as f64;
        assert_eq!(bytes, 169_538.0);
        let capacity = bytes * 30.0 / 2.0;
        let params = LinkParams {
            bandwidth_hz: 1000.0,
            subcarrier_spacing_hz: 1000.0,
            spatial_layers: 1,
            resource_overhead: 0.0,
            points_jitter: 0.0,
            propagation_delay: 0.0,
            reassembly_delay: 0.0,
            queue_budget: 100.0,
            ..LinkParams::default()
        };
        let mcs = McsTable::new(vec![McsEntry {
            min_sinr: 0.0,
            spectral_efficiency: capacity * 8.0 / 1000.0,
            modulation_symbols: 4,
            code_rate: 0.5,
        }])
        .unwrap();
        let mut sim = LinkSimulator::new(params, mcs, SizeModel::default(), 1).unwrap();
        let trace = flat_trace(1, 300, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut delivered = Vec::new();
        for _ in 0..3 {
            for w in sim.simulate_window(&[action.clone()], &trace, &mut rng).unwrap() {
                delivered.extend(w.frames);
            }
        }
        let gen: Vec<f64> = (0..3).map(|k| k as f64 / 30.0).collect();
        let enqueue: Vec<f64> = gen.iter().map(|g| g + 0.0055).collect();
        let oracle = fifo_oracle(&enqueue, bytes, capacity, 0.001);
        let expected: Vec<f64> = oracle.iter().zip(&gen).map(|(d, g)| d - g).collect();
        // Hand values: 6 ms wait + 66.67 ms service, then 33.33 ms more per frame.
        let frozen = [0.072_666_666_666_666_7, 0.106, 0.139_333_333_333_333_3];
        for k in 0..3 {
            assert!((expected[k] - frozen[k]).abs() < 1e-12);
            assert_eq!(delivered[k].seq, k as u64);
            assert!((delivered[k].app - expected[k]).abs() < 1e-7, "frame {k}: {} vs {}", delivered[k].app, expected[k]);
        }
        assert!(delivered[0].app < delivered[1].app && delivered[1].app < delivered[2].app);
    }

    #[test]
    fn outage_window_uses_sentinel() {
        let params = LinkParams::default();
        let mut sim = LinkSimulator::new(params.clone(), McsTable::default(), SizeModel::default(), 2).unwrap();
        let trace = flat_trace(2, 100, -30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = sim
            .simulate_window(&[config("8-00"), config("10-10")], &trace, &mut rng)
            .unwrap();
        for w in stats {
            assert_eq!(w.delivered(), 0);
            assert_eq!((w.prr_rlc, w.prr_pdcp, w.prr_app), (0.0, 0.0, 0.0));
            for layer in [w.rlc, w.pdcp, w.app] {
                assert_eq!(layer, LayerStats::constant(params.decision_interval));
            }
            assert_eq!(w.avg_mcs_symbols, 0.0);
            assert_eq!(w.avg_subcarriers, 0.0);
        }
    }

    #[test]
    fn short_trace_is_rejected() {
        let mut sim = LinkSimulator::new(LinkParams::default(), McsTable::default(), SizeModel::default(), 1).unwrap();
        let trace = flat_trace(1, 99, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sim.simulate_window(&[config("8-00")], &trace, &mut rng),
            Err(Error::Simulation(_))
        ));
    }

    #[test]
    fn congestion_couples_vehicles() {
        let params = LinkParams {
            points_jitter: 0.0,
            ..LinkParams::default()
        };
        let run = |n: usize| {
            let mut sim = LinkSimulator::new(params.clone(), McsTable::default(), SizeModel::default(), n).unwrap();
            let trace = flat_trace(n, 100, 8.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let actions = vec![config("10-10"); n];
            sim.simulate_window(&actions, &trace, &mut rng).unwrap()[0].app.avg
        };
        assert!(run(10) > run(1));
    }

    #[test]
    fn layer_stats_of_one_sample() {
        let s = LayerStats::from_samples([0.03].into_iter()).unwrap();
        assert_eq!(s, LayerStats::constant(0.03));
        assert!(LayerStats::from_samples(std::iter::empty()).is_none());
    }

    #[test]
    fn rejects_inconsistent_params() {
        let p = LinkParams {
            decision_interval: 0.01,
            ..LinkParams::default()
        };
        assert!(p.validate().is_err());
        let p = LinkParams {
            d_kpi: 0.0,
            ..LinkParams::default()
        };
        assert!(p.validate().is_err());
    }
}

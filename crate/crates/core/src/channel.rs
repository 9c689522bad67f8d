//! Uplink channel: SINR traces, the synthetic trace generator and SINR-to-MCS link adaptation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the link-adaptation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    /// Lowest SINR (dB) at which this entry is usable.
    pub min_sinr: f64,
    /// Information bits per resource element.
    pub spectral_efficiency: f64,
    /// Constellation size (4, 16, 64, 256).
    pub modulation_symbols: u32,
    pub code_rate: f64,
}

/// Link-adaptation table, sorted by strictly increasing `min_sinr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        // 4-bit CQI table with 256-QAM; thresholds roughly at 10% BLER.
        const ROWS: [(f64, u32, f64); 15] = [
            (-6.7, 4, 78.0),
            (-4.7, 4, 193.0),
            (-2.3, 4, 449.0),
            (0.2, 16, 378.0),
            (2.4, 16, 490.0),
            (4.3, 16, 616.0),
            (5.9, 64, 466.0),
            (8.1, 64, 567.0),
            (10.3, 64, 666.0),
            (11.7, 64, 772.0),
            (14.1, 64, 873.0),
            (16.3, 256, 711.0),
            (18.7, 256, 797.0),
            (21.0, 256, 885.0),
            (22.7, 256, 948.0),
        ];
        let entries = ROWS
            .iter()
            .map(|&(min_sinr, m, rate_x1024)| {
                let code_rate = rate_x1024 / 1024.0;
                McsEntry {
                    min_sinr,
                    spectral_efficiency: f64::from(m.trailing_zeros()) * code_rate,
                    modulation_symbols: m,
                    code_rate,
                }
            })
            .collect();
        Self { entries }
    }
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("link.mcs", "MCS table is empty"));
        }
        for w in entries.windows(2) {
            if !(w[1].min_sinr > w[0].min_sinr) {
                return Err(Error::config(
                    "link.mcs",
                    "thresholds must be strictly increasing",
                ));
            }
            if w[1].spectral_efficiency < w[0].spectral_efficiency {
                return Err(Error::config(
                    "link.mcs",
                    "spectral efficiency must be non-decreasing",
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn lowest_threshold(&self) -> f64 {
        self.entries[0].min_sinr
    }
}

/// Highest entry whose threshold does not exceed `sinr`; `None` is outage.
pub fn sinr_to_mcs(sinr: f64, table: &McsTable) -> Option<&McsEntry> {
    let idx = table.entries.partition_point(|e| e.min_sinr <= sinr);
    idx.checked_sub(1).map(|i| &table.entries[i])
}

/// Per-vehicle SINR time series on a shared uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    start_time: f64,
    sample_interval: f64,
    sinr_db: Vec<Vec<f64>>,
}

impl ChannelTrace {
    pub fn new(start_time: f64, sample_interval: f64, sinr_db: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_interval > 0.0) {
            return Err(Error::Simulation("sample interval must be positive".into()));
        }
        let len = sinr_db.first().map_or(0, Vec::len);
        if sinr_db.iter().any(|s| s.len() != len) {
            return Err(Error::Simulation(
                "all vehicles must share one time grid".into(),
            ));
        }
        if sinr_db.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Simulation("non-finite SINR sample".into()));
        }
        Ok(Self {
            start_time,
            sample_interval,
            sinr_db,
        })
    }

    pub fn n_vehicles(&self) -> usize {
        self.sinr_db.len()
    }

    pub fn len(&self) -> usize {
        self.sinr_db.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.sample_interval
    }

    pub fn vehicle(&self, v: usize) -> &[f64] {
        &self.sinr_db[v]
    }

    pub fn vehicle_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.sinr_db[v]
    }

    /// Shifts every sample by `delta_db`.
    pub fn offset(&self, delta_db: f64) -> Self {
        let mut out = self.clone();
        out.sinr_db.iter_mut().flatten().for_each(|s| *s += delta_db);
        out
    }

    pub fn read_csv<R: std::io::Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            vehicle_id: usize,
            sinr_db: f64,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_s", "vehicle_id", "sinr_db"] {
            return Err(Error::Schema {
                row: 0,
                message: "expected header `time_s,vehicle_id,sinr_db`".into(),
            });
        }
        let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Schema {
                row: i + 1,
                message: e.to_string(),
            })?;
            let s = series.entry(row.vehicle_id).or_default();
            if let Some(&(prev, _)) = s.last() {
                if !(row.time_s > prev) {
                    return Err(Error::Schema {
                        row: i + 1,
                        message: format!(
                            "timestamps for vehicle {} must be strictly increasing",
                            row.vehicle_id
                        ),
                    });
                }
            }
            s.push((row.time_s, row.sinr_db));
        }
        if series.is_empty() {
            return Err(Error::Schema {
                row: 0,
                message: "trace has no samples".into(),
            });
        }
        if series.keys().copied().ne(0..series.len()) {
            return Err(Error::Schema {
                row: 0,
                message: "vehicle ids must be 0..N-1".into(),
            });
        }
        let reference = &series[&0];
        if reference.len() < 2 {
            return Err(Error::Schema {
                row: 0,
                message: "need at least two samples per vehicle".into(),
            });
        }
        let start = reference[0].0;
        let interval = reference[1].0 - reference[0].0;
        let tol = 1e-6 * interval;
        for (v, s) in &series {
            if s.len() != reference.len() {
                return Err(Error::Schema {
                    row: 0,
                    message: format!("vehicle {v} has {} samples, expected {}", s.len(), reference.len()),
                });
            }
            for (k, &(t, _)) in s.iter().enumerate() {
                if (t - (start + k as f64 * interval)).abs() > tol {
                    return Err(Error::Schema {
                        row: 0,
                        message: format!("vehicle {v}: sample {k} at {t} is off the uniform grid"),
                    });
                }
            }
        }
        let sinr = series
            .into_values()
            .map(|s| s.into_iter().map(|(_, x)| x).collect())
            .collect();
        ChannelTrace::new(start, interval, sinr)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_s,vehicle_id,sinr_db")?;
        for k in 0..self.len() {
            let t = self.start_time + k as f64 * self.sample_interval;
            for (v, s) in self.sinr_db.iter().enumerate() {
                writeln!(out, "{t},{v},{}", s[k])?;
            }
        }
        Ok(())
    }
}

/// Parametric generator for per-vehicle SINR traces: log-distance path loss
/// along a sinusoidal trajectory, AR(1) log-normal shadowing and i.i.d.
/// small-scale fading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub carrier_ghz: f64,
    pub antenna_gain_db: f64,
    pub noise_figure_db: f64,
    pub interference_margin_db: f64,
    pub pathloss_exponent: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub mobility_amplitude_m: f64,
    pub mobility_period_s: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_corr_s: f64,
    pub fading_sigma_db: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            antenna_gain_db: 22.0,
            noise_figure_db: 7.0,
            interference_margin_db: 3.0,
            pathloss_exponent: 3.0,
            distance_min_m: 30.0,
            distance_max_m: 150.0,
            mobility_amplitude_m: 40.0,
            mobility_period_s: 40.0,
            shadowing_sigma_db: 6.0,
            shadowing_corr_s: 2.0,
            fading_sigma_db: 1.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel.carrier_ghz", self.carrier_ghz),
            ("channel.pathloss_exponent", self.pathloss_exponent),
            ("channel.distance_min_m", self.distance_min_m),
            ("channel.mobility_period_s", self.mobility_period_s),
            ("channel.shadowing_corr_s", self.shadowing_corr_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("channel.mobility_amplitude_m", self.mobility_amplitude_m),
            ("channel.shadowing_sigma_db", self.shadowing_sigma_db),
            ("channel.fading_sigma_db", self.fading_sigma_db),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }
        if self.distance_max_m < self.distance_min_m {
            return Err(Error::config(
                "channel.distance_max_m",
                "must not be below distance_min_m",
            ));
        }
        Ok(())
    }

    /// Mean SINR (dB) at distance `d` metres, before shadowing and fading.
    pub fn mean_sinr(&self, d: f64, tx_power_dbm: f64, bandwidth_hz: f64) -> f64 {
        let fspl_1m = 20.0 * (4.0 * PI * self.carrier_ghz * 1e9 / 299_792_458.0).log10();
        let pathloss = fspl_1m + 10.0 * self.pathloss_exponent * d.max(1.0).log10();
        let noise_dbm = -174.0 + 10.0 * bandwidth_hz.log10() + self.noise_figure_db;
        tx_power_dbm + self.antenna_gain_db - pathloss - noise_dbm - self.interference_margin_db
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        n_vehicles: usize,
        n_samples: usize,
        sample_interval: f64,
        tx_power_dbm: f64,
        bandwidth_hz: f64,
        rng: &mut R,
    ) -> Result<ChannelTrace> {
        let shadow = Normal::new(0.0, self.shadowing_sigma_db)
            .map_err(|e| Error::config("channel.shadowing_sigma_db", e.to_string()))?;
        let fading = Normal::new(0.0, self.fading_sigma_db)
            .map_err(|e| Error::config("channel.fading_sigma_db", e.to_string()))?;
        let rho = (-sample_interval / self.shadowing_corr_s).exp();
        let innovation = (1.0 - rho * rho).sqrt();

        let mut sinr = Vec::with_capacity(n_vehicles);
        for _ in 0..n_vehicles {
            let base = rng.random_range(self.distance_min_m..=self.distance_max_m);
            let phase = rng.random_range(0.0..2.0 * PI);
            let period = self.mobility_period_s * rng.random_range(0.75..1.25);
            let mut s = shadow.sample(rng);
            let mut series = Vec::with_capacity(n_samples);
            for k in 0..n_samples {
                let t = k as f64 * sample_interval;
                let d = (base + self.mobility_amplitude_m * (2.0 * PI * t / period + phase).sin())
                    .max(5.0);
                series.push(self.mean_sinr(d, tx_power_dbm, bandwidth_hz) + s + fading.sample(rng));
                s = rho * s + innovation * shadow.sample(rng);
            }
            sinr.push(series);
        }
        ChannelTrace::new(0.0, sample_interval, sinr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mcs_lookup_boundaries() {
        let t = McsTable::default();
        assert!(sinr_to_mcs(-30.0, &t).is_none());
        assert!(sinr_to_mcs(t.lowest_threshold() - 1e-9, &t).is_none());
        let k = 7;
        let e = t.entries()[k];
        assert_eq!(sinr_to_mcs(e.min_sinr, &t), Some(&t.entries()[k]));
        assert_eq!(sinr_to_mcs(e.min_sinr - 1e-9, &t), Some(&t.entries()[k - 1]));
        assert_eq!(sinr_to_mcs(80.0, &t), t.entries().last());
    }

    #[test]
    fn default_mcs_table_is_sorted() {
        let t = McsTable::default();
        assert!(McsTable::new(t.entries().to_vec()).is_ok());
        let top = t.entries().last().unwrap();
        assert_eq!(top.modulation_symbols, 256);
        assert!((top.spectral_efficiency - 7.4063).abs() < 1e-4);
        let mut bad = t.entries().to_vec();
        bad.swap(0, 1);
        assert!(McsTable::new(bad).is_err());
        assert!(McsTable::new(vec![]).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = ChannelModel::default()
            .generate(3, 50, 0.001, 28.0, 50e6, &mut rng)
            .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = ChannelTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.n_vehicles(), 3);
        assert_eq!(back.len(), 50);
        for v in 0..3 {
            assert_eq!(back.vehicle(v), trace.vehicle(v));
        }
    }

    #[test]
    fn trace_csv_rejects_malformed_input() {
        let bad_header = "t,vehicle,sinr\n0,0,1\n";
        assert!(ChannelTrace::read_csv(bad_header.as_bytes()).is_err());
        let non_increasing = "time_s,vehicle_id,sinr_db\n0,0,1\n0.001,0,1\n0.001,0,2\n";
        assert!(ChannelTrace::read_csv(non_increasing.as_bytes()).is_err());
        let non_uniform = "time_s,vehicle_id,sinr_db\n0,0,1\n0.001,0,1\n0.003,0,2\n";
        assert!(ChannelTrace::read_csv(non_uniform.as_bytes()).is_err());
        let gap = "time_s,vehicle_id,sinr_db\n0,1,1\n0.001,1,1\n";
        assert!(ChannelTrace::read_csv(gap.as_bytes()).is_err());
    }

    #[test]
    fn generator_is_deterministic_and_distance_sensitive() {
        let model = ChannelModel::default();
        let a = model
            .generate(2, 100, 0.001, 28.0, 50e6, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = model
            .generate(2, 100, 0.001, 28.0, 50e6, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
        assert!(model.mean_sinr(30.0, 28.0, 50e6) > model.mean_sinr(150.0, 28.0, 50e6));
    }
}

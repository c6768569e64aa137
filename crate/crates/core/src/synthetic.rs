//! Synthetic half-hourly load: daily, weekly and annual sinusoids on a flat
//! base, with multiplicative Gaussian noise.

use std::f64::consts::TAU;

use chrono::{NaiveDate, NaiveDateTime};
use rand_distr::{Distribution, Normal};

use crate::data_ingest::{LoadSeries, AEMO_DATE_FORMAT};
use crate::features::STEPS_PER_DAY;
use crate::nn::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLoad {
    pub start: NaiveDateTime,
    pub days: usize,
    pub base_mw: f64,
    /// Relative amplitudes of each cycle.
    pub daily: f64,
    pub weekly: f64,
    pub annual: f64,
    /// Standard deviation of the multiplicative noise.
    pub noise: f64,
    pub seed: u64,
    pub region: String,
}

impl Default for SyntheticLoad {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2016, 1, 1)
                .and_then(|d| d.and_hms_opt(0, 30, 0))
                .expect("valid date"),
            days: 730,
            base_mw: 6000.0,
            daily: 0.15,
            weekly: 0.05,
            annual: 0.10,
            noise: 0.02,
            seed: 2024,
            region: "SYN1".into(),
        }
    }
}

impl SyntheticLoad {
    pub fn demands(&self) -> Vec<f64> {
        let mut rng = seeded_rng(self.seed, 0);
        let noise = Normal::new(0.0, self.noise).expect("finite noise level");
        let day = STEPS_PER_DAY as f64;
        (0..self.days * STEPS_PER_DAY)
            .map(|t| {
                let t = t as f64;
                let shape = 1.0
                    + self.daily * (TAU * t / day).sin()
                    + self.weekly * (TAU * t / (7.0 * day)).sin()
                    + self.annual * (TAU * t / (365.0 * day)).cos();
                (self.base_mw * shape * (1.0 + noise.sample(&mut rng))).max(1.0)
            })
            .collect()
    }

    pub fn series(&self) -> LoadSeries {
        LoadSeries::from_values(self.region.clone(), self.start, &self.demands())
            .expect("synthetic series is uniform and positive")
    }

    /// The series rendered as an AEMO price-and-demand CSV.
    pub fn aemo_csv(&self) -> String {
        let mut out = String::from("REGION,SETTLEMENTDATE,TOTALDEMAND,RRP,PERIODTYPE\n");
        for r in self.series().records() {
            out.push_str(&format!(
                "{},{},{:.2},50.00,TRADE\n",
                self.region,
                r.timestamp.format(AEMO_DATE_FORMAT),
                r.demand
            ));
        }
        out
    }
}

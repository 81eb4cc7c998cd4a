// SPDX-License-Identifier: MIT OR Apache-2.0

//! Name-keyed registries for detection methods and search strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrefixSummaries};
use crate::detectors::DetectorKind;
use crate::error::{Result, ScanError};
use crate::lasso::{run_ocscan_r, OcScanRResult, RefineConfig};
use crate::scanners::{run_ocscan, run_scan, OcScanResult, ScanParams};
use crate::search::{FullGridSearch, OptimisticSearch, SearchStrategy, SearchTrace};

/// Everything a method needs for one dataset.
pub struct MethodContext<'a> {
    pub ds: &'a Dataset,
    pub ps: &'a PrefixSummaries,
    pub params: &'a ScanParams,
    pub search: &'a dyn SearchStrategy,
    pub refine: &'a RefineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub method: String,
    /// `n` when no change is reported.
    pub theta_hat: usize,
    pub q_hat: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oc: Option<OcScanResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<OcScanRResult>,
    /// Search traces keyed by detector (`max`, `quad`).
    #[serde(skip)]
    pub traces: Vec<(DetectorKind, SearchTrace)>,
}

pub trait ChangePointMethod: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, ctx: &MethodContext<'_>) -> Result<Detection>;
}

/// A single covariance-scanning detector.
pub struct SingleScan(pub DetectorKind);

impl ChangePointMethod for SingleScan {
    fn name(&self) -> &'static str {
        match self.0 {
            DetectorKind::Max => "mc",
            DetectorKind::Quad => "qc",
        }
    }

    fn detect(&self, ctx: &MethodContext<'_>) -> Result<Detection> {
        let out = run_scan(self.0, ctx.ps, ctx.params, ctx.search)?;
        Ok(Detection {
            method: self.name().into(),
            theta_hat: out.theta_hat,
            q_hat: out.q_hat,
            oc: None,
            refinement: None,
            traces: vec![(self.0, out.trace)],
        })
    }
}

pub struct OcScan;

fn oc_traces(oc: &mut OcScanResult) -> Vec<(DetectorKind, SearchTrace)> {
    let mut traces = Vec::new();
    if let Some(mc) = oc.mc.take() {
        traces.push((DetectorKind::Max, mc.trace));
    }
    if let Some(qc) = oc.qc.take() {
        traces.push((DetectorKind::Quad, qc.trace));
    }
    traces
}

impl ChangePointMethod for OcScan {
    fn name(&self) -> &'static str {
        "oc"
    }

    fn detect(&self, ctx: &MethodContext<'_>) -> Result<Detection> {
        let mut oc = run_ocscan(ctx.ps, ctx.params, ctx.search)?;
        let traces = oc_traces(&mut oc);
        Ok(Detection {
            method: self.name().into(),
            theta_hat: oc.theta_oc,
            q_hat: oc.q_hat,
            oc: Some(oc),
            refinement: None,
            traces,
        })
    }
}

/// OcScan followed by the Lasso-projected refinement. Reports no change
/// (rather than an error) when OcScan does not fire.
pub struct OcScanR;

impl ChangePointMethod for OcScanR {
    fn name(&self) -> &'static str {
        "ocr"
    }

    fn detect(&self, ctx: &MethodContext<'_>) -> Result<Detection> {
        match run_ocscan_r(ctx.ds, ctx.ps, ctx.params, ctx.search, ctx.refine) {
            Ok(mut res) => {
                let traces = oc_traces(&mut res.oc);
                Ok(Detection {
                    method: self.name().into(),
                    theta_hat: res.theta_r,
                    q_hat: 1,
                    oc: None,
                    refinement: Some(res),
                    traces,
                })
            }
            Err(ScanError::NoChange(_)) => {
                let mut oc = run_ocscan(ctx.ps, ctx.params, ctx.search)?;
                let traces = oc_traces(&mut oc);
                Ok(Detection {
                    method: self.name().into(),
                    theta_hat: ctx.ds.n(),
                    q_hat: 0,
                    oc: Some(oc),
                    refinement: None,
                    traces,
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Case-insensitive lookup table from names and aliases to shared entries.
pub struct Registry<T: ?Sized> {
    what: &'static str,
    canonical: Vec<&'static str>,
    index: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn empty(what: &'static str) -> Self {
        Self {
            what,
            canonical: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Registers `entry` under `name` and `aliases`; later registrations
    /// replace earlier ones with the same key.
    pub fn register(&mut self, name: &'static str, aliases: &[&str], entry: Arc<T>) {
        if !self.canonical.contains(&name) {
            self.canonical.push(name);
        }
        for key in std::iter::once(name).chain(aliases.iter().copied()) {
            self.index.insert(key.to_ascii_lowercase(), Arc::clone(&entry));
        }
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.index
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| ScanError::Unknown {
                what: self.what,
                name: name.into(),
                available: self.canonical.join(", "),
            })
    }

    /// Canonical names in registration order.
    pub fn names(&self) -> &[&'static str] {
        &self.canonical
    }
}

pub type MethodRegistry = Registry<dyn ChangePointMethod>;
pub type SearchRegistry = Registry<dyn SearchStrategy>;

impl Registry<dyn ChangePointMethod> {
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty("method");
        reg.register("mc", &["mcscan"], Arc::new(SingleScan(DetectorKind::Max)));
        reg.register("qc", &["qcscan"], Arc::new(SingleScan(DetectorKind::Quad)));
        reg.register("oc", &["ocscan"], Arc::new(OcScan));
        reg.register("ocr", &["ocscan_r", "ocscan.r"], Arc::new(OcScanR));
        reg
    }
}

impl Registry<dyn SearchStrategy> {
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty("search strategy");
        reg.register("os", &["optimistic"], Arc::new(OptimisticSearch));
        reg.register("fs", &["full", "full_grid"], Arc::new(FullGridSearch));
        reg
    }
}

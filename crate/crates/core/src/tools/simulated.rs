//! Stack-level restoration simulator.
//!
//! A simulated tool never looks at pixels. It edits the provenance stack and
//! the output is re-rendered from the clean reference, so restoration quality
//! follows from the stack alone. Removing one distortion while others are
//! still entangled with it leaves a Gaussian residual whose σ grows with the
//! number of remaining originals; residuals combine in quadrature. A tool
//! whose kind is absent damages the image with an artifact layer.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Family, RestorationTool, ToolError};
use crate::degrade::Degrader;
use crate::domain::{DistortionInstance, DistortionKind, ImageState, Recipe, ToolId};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Residual σ per original distortion still present at removal time.
    pub eta_single: f64,
    /// Flat residual σ left by de-hybrid.
    pub eta_hybrid: f64,
    /// σ of the layer a mismatched tool adds.
    pub sigma_artifact: f64,
    /// Treat haze and low light as unstable: removing anything else while
    /// one of them remains, or using a wrong tool in their presence, costs an
    /// extra artifact of `2 σ_artifact`.
    pub unstable_penalty: bool,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig { eta_single: 2.0, eta_hybrid: 1.0, sigma_artifact: 4.0, unstable_penalty: false }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.eta_hybrid > 0.0 && self.eta_hybrid < self.eta_single && self.eta_single <= self.sigma_artifact;
        if ok && self.sigma_artifact.is_finite() {
            Ok(())
        } else {
            Err(alloc::format!(
                "simulator constants need 0 < eta_hybrid < eta_single <= sigma_artifact, got {} / {} / {}",
                self.eta_hybrid,
                self.eta_single,
                self.sigma_artifact
            ))
        }
    }
}

fn unstable(kind: DistortionKind) -> bool {
    matches!(kind, DistortionKind::Haze | DistortionKind::LowLight)
}

fn layer_seed(stack: &[DistortionInstance], tool: ToolId, salt: u64) -> u64 {
    let mut words: Vec<u64> = stack.iter().map(|d| d.seed).collect();
    words.push(tool.kind().rank() as u64);
    words.push(salt);
    rng::derive_all(0x51a7, &words)
}

/// New stack after invoking `tool` on `stack`.
pub fn simulated_step(stack: &[DistortionInstance], tool: ToolId, cfg: &SimulatorConfig) -> Vec<DistortionInstance> {
    if tool.is_hybrid() {
        let seed = layer_seed(stack, tool, 0);
        return alloc::vec![DistortionInstance::new(Recipe::Residual { sigma: cfg.eta_hybrid }, seed)];
    }
    let target = tool.kind();
    let any_unstable = stack.iter().any(|d| unstable(d.kind()));
    let Some(pos) = stack.iter().rposition(|d| d.kind() == target) else {
        let mut sigma = cfg.sigma_artifact;
        if cfg.unstable_penalty && any_unstable {
            sigma *= 2.0;
        }
        let mut out = stack.to_vec();
        out.push(DistortionInstance::new(Recipe::Artifact { sigma }, layer_seed(stack, tool, 1)));
        return out;
    };

    let others = stack.iter().enumerate().filter(|&(i, d)| i != pos && d.kind().is_original()).count();
    let mut old = 0.0;
    let mut out: Vec<DistortionInstance> = Vec::with_capacity(stack.len() + 1);
    for (i, d) in stack.iter().enumerate() {
        match d.recipe {
            _ if i == pos => {}
            Recipe::Residual { sigma } => old = sigma,
            _ => out.push(d.clone()),
        }
    }
    let fresh = cfg.eta_single * others as f64;
    let sigma = libm::sqrt(old * old + fresh * fresh);
    if sigma > 0.0 {
        out.push(DistortionInstance::new(Recipe::Residual { sigma }, layer_seed(stack, tool, 2)));
    }
    if cfg.unstable_penalty && !unstable(target) && out.iter().any(|d| unstable(d.kind())) {
        let sigma = 2.0 * cfg.sigma_artifact;
        out.push(DistortionInstance::new(Recipe::Artifact { sigma }, layer_seed(stack, tool, 3)));
    }
    out
}

/// Simulator constants plus the degrader used to re-render stacks.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    pub config: SimulatorConfig,
    pub degrader: Degrader,
}

impl Simulator {
    pub fn new(config: SimulatorConfig, degrader: Degrader) -> Self {
        Simulator { config, degrader }
    }

    pub fn step(&self, tool: ToolId, image: &ImageState) -> Result<ImageState, ToolError> {
        let prov = image.provenance.as_ref().ok_or(ToolError::MissingProvenance { tool })?;
        let mut next = prov.clone();
        next.stack = simulated_step(&prov.stack, tool, &self.config);
        let raster = self
            .degrader
            .render_stack(&next.clean, &next.stack)
            .map_err(|source| ToolError::Degrade { tool, source })?;
        ImageState::with_provenance(raster, next)
            .map_err(|e| ToolError::Degrade { tool, source: e.into() })
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedTool {
    id: ToolId,
    sim: Arc<Simulator>,
}

impl SimulatedTool {
    pub fn new(id: ToolId, sim: Arc<Simulator>) -> Self {
        SimulatedTool { id, sim }
    }
}

impl RestorationTool for SimulatedTool {
    fn id(&self) -> ToolId {
        self.id
    }

    fn family(&self) -> Family {
        Family::Simulated
    }

    fn invoke(&self, image: &ImageState) -> Result<ImageState, ToolError> {
        self.sim.step(self.id, image)
    }
}

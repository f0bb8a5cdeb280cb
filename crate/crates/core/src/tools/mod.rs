//! Restoration tools and the registry that resolves a [`ToolId`] to an
//! implementation.
//!
//! Three families exist: classical pixel baselines, simulator tools that act
//! on the degradation stack, and remote model servers (the latter live in the
//! std crate and plug in through [`RestorationTool`]).

pub mod classical;
pub mod simulated;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::degrade::DegradeError;
use crate::domain::{ImageState, ToolId};

pub use classical::{ClassicalConfig, ClassicalTool};
pub use simulated::{simulated_step, SimulatedTool, Simulator, SimulatorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Classical,
    Simulated,
    Remote,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolError {
    #[error("{tool} is not available: {reason}")]
    Unavailable { tool: ToolId, reason: String },
    #[error("{tool} (simulated) needs an image with degradation provenance")]
    MissingProvenance { tool: ToolId },
    #[error("{tool} timed out after {attempts} attempt(s)")]
    Timeout { tool: ToolId, attempts: u32 },
    #[error("{tool} returned HTTP {status} after {attempts} attempt(s)")]
    Status { tool: ToolId, status: u16, attempts: u32 },
    #[error("{tool} protocol error after {attempts} attempt(s): {message}")]
    Protocol { tool: ToolId, message: String, attempts: u32 },
    #[error("{tool} returned {got:?}, expected {expected:?}")]
    DimensionMismatch { tool: ToolId, expected: (u32, u32), got: (u32, u32) },
    #[error("{tool}: {source}")]
    Degrade { tool: ToolId, source: DegradeError },
}

impl ToolError {
    /// Capability errors let the registry try the next family.
    pub fn is_capability(&self) -> bool {
        matches!(self, ToolError::Unavailable { .. } | ToolError::MissingProvenance { .. })
    }

    /// Attempts made, for errors that come from a retried remote call.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            ToolError::Timeout { attempts, .. }
            | ToolError::Status { attempts, .. }
            | ToolError::Protocol { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

pub trait RestorationTool: Send + Sync {
    fn id(&self) -> ToolId;
    fn family(&self) -> Family;
    fn invoke(&self, image: &ImageState) -> Result<ImageState, ToolError>;
}

/// Result of a registry invocation: the output and the family that produced
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub image: ImageState,
    pub family: Family,
}

/// Per-tool fallback chains. Entries are tried in registration order and a
/// capability error moves on to the next one.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    chains: BTreeMap<ToolId, Vec<Arc<dyn RestorationTool>>>,
}

impl core::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let mut m = f.debug_map();
        for (id, chain) in &self.chains {
            let fams: Vec<Family> = chain.iter().map(|t| t.family()).collect();
            m.entry(id, &fams);
        }
        m.finish()
    }
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// All 11 tools backed by the simulator.
    pub fn simulated(sim: Arc<Simulator>) -> Self {
        let mut reg = Self::empty();
        for id in ToolId::all() {
            reg.push(Arc::new(SimulatedTool::new(id, sim.clone())));
        }
        reg
    }

    /// Classical baselines first where they exist, the simulator behind them.
    pub fn classical_then_simulated(classical: ClassicalConfig, sim: Arc<Simulator>) -> Self {
        let mut reg = Self::empty();
        for id in ClassicalTool::SUPPORTED {
            reg.push(Arc::new(ClassicalTool::new(id, classical)));
        }
        for id in ToolId::all() {
            reg.push(Arc::new(SimulatedTool::new(id, sim.clone())));
        }
        reg
    }

    /// Appends a tool to the end of its chain.
    pub fn push(&mut self, tool: Arc<dyn RestorationTool>) {
        self.chains.entry(tool.id()).or_default().push(tool);
    }

    /// Puts a tool at the front of its chain.
    pub fn prepend(&mut self, tool: Arc<dyn RestorationTool>) {
        self.chains.entry(tool.id()).or_default().insert(0, tool);
    }

    /// The same registry with `tool` unregistered.
    pub fn without(&self, tool: ToolId) -> Self {
        let mut reg = self.clone();
        reg.chains.remove(&tool);
        reg
    }

    pub fn contains(&self, tool: ToolId) -> bool {
        self.chains.get(&tool).is_some_and(|c| !c.is_empty())
    }

    pub fn families(&self, tool: ToolId) -> Vec<Family> {
        self.chains.get(&tool).map(|c| c.iter().map(|t| t.family()).collect()).unwrap_or_default()
    }

    pub fn tools(&self) -> impl Iterator<Item = ToolId> + '_ {
        self.chains.iter().filter(|(_, c)| !c.is_empty()).map(|(id, _)| *id)
    }

    pub fn invoke(&self, tool: ToolId, image: &ImageState) -> Result<Invocation, ToolError> {
        let chain = self
            .chains
            .get(&tool)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| ToolError::Unavailable { tool, reason: "not registered".into() })?;
        let mut last = None;
        for t in chain {
            match t.invoke(image) {
                Ok(out) => return Ok(Invocation { image: out, family: t.family() }),
                Err(e) if e.is_capability() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("chain is non-empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::apply;
    use crate::domain::{DistortionInstance, DistortionKind, Raster, Recipe};

    fn noisy() -> ImageState {
        let clean = ImageState::clean(Raster::from_fn(48, 48, |x, y| [(x * 5) as u8, (y * 5) as u8, 90])).unwrap();
        apply(&clean, &DistortionInstance::new(Recipe::Noise { sigma: 20.0 }, 4)).unwrap()
    }

    #[test]
    fn every_tool_resolves_in_both_default_registries() {
        let sim = Arc::new(Simulator::default());
        for reg in [ToolRegistry::simulated(sim.clone()), ToolRegistry::classical_then_simulated(ClassicalConfig::default(), sim)] {
            for id in ToolId::all() {
                assert!(reg.contains(id));
                let out = reg.invoke(id, &noisy()).unwrap();
                assert_eq!(out.image.raster.dims(), (48, 48));
            }
        }
    }

    #[test]
    fn classical_falls_back_to_simulated() {
        let reg = ToolRegistry::classical_then_simulated(ClassicalConfig::default(), Arc::new(Simulator::default()));
        let rain = ToolId::try_from(DistortionKind::RainStreak).unwrap();
        assert_eq!(reg.families(rain), [Family::Simulated]);
        assert_eq!(reg.invoke(rain, &noisy()).unwrap().family, Family::Simulated);
        let denoise = ToolId::try_from(DistortionKind::Noise).unwrap();
        assert_eq!(reg.families(denoise), [Family::Classical, Family::Simulated]);
        assert_eq!(reg.invoke(denoise, &noisy()).unwrap().family, Family::Classical);
    }

    #[test]
    fn removed_tools_are_unavailable() {
        let reg = ToolRegistry::simulated(Arc::new(Simulator::default())).without(ToolId::HYBRID);
        assert!(!reg.contains(ToolId::HYBRID));
        assert!(matches!(reg.invoke(ToolId::HYBRID, &noisy()), Err(ToolError::Unavailable { .. })));
        assert_eq!(reg.tools().count(), 10);
    }

    #[test]
    fn simulated_tools_need_provenance() {
        let reg = ToolRegistry::simulated(Arc::new(Simulator::default()));
        let bare = ImageState::new(Raster::filled(40, 40, [9; 3])).unwrap();
        let err = reg.invoke(ToolId::HYBRID, &bare).unwrap_err();
        assert_eq!(err, ToolError::MissingProvenance { tool: ToolId::HYBRID });
    }
}

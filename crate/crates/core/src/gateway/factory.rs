use std::path::Path;
use std::sync::Arc;

use super::{Gateway, HttpGateway, MockGateway, MockPolicy, RoutingGateway};
use crate::dispatch::Study;
use crate::Result;

/// Builds the gateway a run talks to.
pub trait GatewayFactory: Send + Sync {
    /// With `mock_only` every model is answered offline, whatever its schema.
    fn build(&self, study: &Study, workdir: &Path, mock_only: bool) -> Result<Arc<dyn Gateway>>;
}

/// Mock models go to the offline gateway, the rest over HTTP with
/// credentials from the environment.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultGateways;

impl GatewayFactory for DefaultGateways {
    fn build(&self, study: &Study, workdir: &Path, mock_only: bool) -> Result<Arc<dyn Gateway>> {
        let mock = mock_gateway(study, workdir)?;
        let remote: Vec<_> = study.config.models.iter().filter(|m| m.is_remote()).cloned().collect();
        let http = if mock_only || remote.is_empty() {
            None
        } else {
            Some(HttpGateway::new(&remote)?)
        };
        Ok(Arc::new(RoutingGateway { http, mock: Some(mock) }))
    }
}

/// The configured mock policy, or a neutral one over the run's personas.
pub fn mock_gateway(study: &Study, workdir: &Path) -> Result<MockGateway> {
    match &study.config.sources.mock_policy {
        Some(p) => MockGateway::load(&workdir.join(p)),
        None => {
            let ids: Vec<&str> = study.config.personas.iter().map(String::as_str).collect();
            Ok(MockGateway::new(MockPolicy::neutral(&ids)))
        }
    }
}

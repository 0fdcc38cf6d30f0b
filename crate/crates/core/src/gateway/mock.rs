//! Transports that never touch the network.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

use super::cache::read_fixture_file;
use super::transport::{Transport, TransportError, WireRequest};
use super::GatewayError;

/// Call counter and in-flight gauge shared by the test transports.
#[derive(Debug, Default)]
pub struct CallGauge {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl CallGauge {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn enter(&self) -> GaugeGuard<'_> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(self)
    }
}

struct GaugeGuard<'a>(&'a CallGauge);

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Serves pinned responses keyed by request fingerprint.
pub struct MockTransport {
    fixtures: HashMap<String, Value>,
    gauge: Arc<CallGauge>,
}

impl MockTransport {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_map(read_fixture_file(path)?))
    }

    pub fn from_map(fixtures: HashMap<String, Value>) -> Self {
        Self { fixtures, gauge: Arc::new(CallGauge::default()) }
    }

    pub fn gauge(&self) -> Arc<CallGauge> {
        self.gauge.clone()
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Transport for MockTransport {
    fn send(&self, req: &WireRequest) -> Result<Value, TransportError> {
        let _g = self.gauge.enter();
        self.fixtures
            .get(&req.fingerprint)
            .cloned()
            .ok_or_else(|| TransportError::FixtureMiss { fingerprint: req.fingerprint.clone() })
    }
}

/// Computes responses with a closure. Used to author fixtures and in tests.
pub struct ScriptedTransport<F> {
    script: F,
    gauge: Arc<CallGauge>,
}

impl<F> ScriptedTransport<F>
where
    F: Fn(&WireRequest) -> Result<Value, TransportError> + Send + Sync,
{
    pub fn new(script: F) -> Self {
        Self { script, gauge: Arc::new(CallGauge::default()) }
    }

    pub fn gauge(&self) -> Arc<CallGauge> {
        self.gauge.clone()
    }
}

impl<F> Transport for ScriptedTransport<F>
where
    F: Fn(&WireRequest) -> Result<Value, TransportError> + Send + Sync,
{
    fn send(&self, req: &WireRequest) -> Result<Value, TransportError> {
        let _g = self.gauge.enter();
        (self.script)(req)
    }
}

//! Deterministic discrete-event simulator of a virtualized smartphone
//! traffic test bed.
//!
//! Virtual phones lease addresses from a DHCP server, a test driver finds
//! them by polling the leases file, connects over a small adb-like text
//! protocol and launches apps one after another. Every packet the apps
//! generate crosses a gateway router that classifies flows by payload
//! signatures, enforces per-app policies and keeps per-subscriber
//! statistics.

pub mod appmodels;
pub mod cli;
pub mod device;
pub mod dhcpd;
pub mod driver;
pub mod netfabric;
pub mod router_dpi;

pub use driver::report::RunReport;
pub use driver::scenario::Scenario;
pub use driver::run_scenario;

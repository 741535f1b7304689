pub mod objective;
pub mod cluster;
pub mod autoscale;
pub mod chaos;
pub mod world;
pub mod scenario;

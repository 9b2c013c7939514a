//! Holds the end-to-end acceptance checks in `tests/acceptance.rs`. They run
//! whole simulated days and take tens of minutes.

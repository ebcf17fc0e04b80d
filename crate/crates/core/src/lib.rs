// SPDX-License-Identifier: Apache-2.0

//! Feedback-driven transaction-sequence fuzzing for smart contract models.

pub mod agents;
pub mod campaign;
pub mod clock;
pub mod crp;
pub mod feedback;
pub mod oracles;
pub mod txmodel;
pub mod vm;

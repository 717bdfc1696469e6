//! Fusion scheduling and execution for sparse tensor contraction trees.
//!
//! A binary contraction tree ([`network`]) is turned into a finite-domain
//! model over statement, loop and CSF mode positions ([`constraints`]); the
//! smallest intermediate order bound with a solution is lowered to a
//! `forall`/`where` loop IR ([`lowering`]) and interpreted over CSF inputs
//! with dense workspaces ([`executor`]).

pub mod bench;
pub mod cli;
pub mod constraints;
pub mod executor;
pub mod lowering;
pub mod network;
pub mod tensor;

//! Evolving itemized playbooks for LLM context adaptation.
//!
//! A [`playbook::Playbook`] holds short lessons as bullets. The Generator,
//! Reflector and Curator roles in [`roles`] propose changes as
//! [`delta::DeltaContext`] values, which [`delta::merge_batch`] applies
//! deterministically. [`refine`] keeps the playbook within a token budget,
//! [`adaptation`] runs the offline and online loops, and [`harness`] holds
//! tasks, evaluation and reporting.

pub mod delta;
pub mod embeddings;
pub mod playbook;
pub mod refine;
pub mod retry;
pub mod tokens;
pub mod clock;
pub mod llm;
pub mod roles;
pub mod adaptation;
pub mod harness;
pub mod rundir;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/playbook.md")]
    mod playbook {}
    #[doc = include_str!("../../../book/src/deltas.md")]
    mod deltas {}
    #[doc = include_str!("../../../book/src/refine.md")]
    mod refine {}
    #[doc = include_str!("../../../book/src/adaptation.md")]
    mod adaptation {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

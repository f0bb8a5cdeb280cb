//! Std companion to `restorekit-core`: configuration, PNG files, reference
//! encoder subprocesses, remote model clients, the on-disk blob and event
//! stores, corpus writers, the experiment harness and the HTTP gateway.

pub mod blobstore;
pub mod codec;
pub mod config;
pub mod bench;
pub mod datagen;
pub mod eventstore;
pub mod gateway;
pub mod png_io;
pub mod profile;
pub mod remote;

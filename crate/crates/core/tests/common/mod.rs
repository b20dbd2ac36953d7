#![allow(dead_code)]

pub mod attn;
pub mod grad;
pub mod oracle;

//! Acceptance suite for the workspace. Everything lives in the `acceptance`
//! test target (`cargo test -p dsa-suite --test acceptance`), which prints
//! one verdict per criterion and fails if any criterion fails.

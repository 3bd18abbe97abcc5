mod common;

use common::grad;

#[test]
fn matmul() {
    grad::matmul();
}

#[test]
fn conv2d() {
    grad::conv2d();
}

#[test]
fn global_avg_pool() {
    grad::global_avg_pool();
}

#[test]
fn softmax_rows() {
    grad::softmax_rows();
}

#[test]
fn sparsemax_rows_away_from_support_boundaries() {
    grad::sparsemax_rows_away_from_support_boundaries();
}

#[test]
fn orthogonal_fuse() {
    grad::orthogonal_fuse();
}

#[test]
fn id_loss() {
    grad::id_loss();
}

#[test]
fn triplet_loss() {
    grad::triplet_loss();
}

#[test]
fn discriminative_loss() {
    grad::discriminative_loss();
}

#[test]
fn diversity_loss() {
    grad::diversity_loss();
}

#[test]
fn total_loss() {
    grad::total_loss();
}

#[test]
fn encoder_block() {
    grad::encoder_block();
}

#[test]
fn dem1_composite() {
    grad::dem1_composite();
}

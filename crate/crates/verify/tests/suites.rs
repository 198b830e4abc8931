use thermalsplat_verify::{gradcheck, heat, identity, io, losses, metrics, Check};

fn assert_pass(c: Check) {
    println!("{c}");
    assert!(c.passed, "{c}");
}

#[test]
fn physics_oracle() {
    assert_pass(heat::criterion());
}

#[test]
fn identity_at_init() {
    assert_pass(identity::criterion());
}

#[test]
fn loss_contract() {
    assert_pass(losses::criterion());
}

#[test]
fn metric_sanity() {
    assert_pass(metrics::criterion());
}

#[test]
fn io_fixtures() {
    assert_pass(io::criterion());
}

#[test]
fn gradient_integrity() {
    assert_pass(gradcheck::criterion(&gradcheck::GradCheckConfig::default()));
}

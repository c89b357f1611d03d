use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rwstwin::kinematics::DhTable;
use rwstwin::wire::paths::JOINTTARGET;
use rwstwin::wire::{
    digest_client_sign, DigestCredentials, DigestVerifier, IoSnapshotMsg, JointTargetMsg,
    RobTargetMsg, WireMessage,
};
use rwstwin_bench::{io_message, joint_message, robtarget_message};

fn codec(c: &mut Criterion) {
    let joints = joint_message();
    let robtarget = robtarget_message(&DhTable::irb120());
    let io = io_message();
    let (jb, rb, ib) = (joints.encode(), robtarget.encode(), io.encode());

    let mut g = c.benchmark_group("codec");
    g.bench_function("jointtarget_encode", |b| b.iter(|| black_box(&joints).encode()));
    g.bench_function("jointtarget_decode", |b| b.iter(|| JointTargetMsg::decode(black_box(&jb)).unwrap()));
    g.bench_function("robtarget_decode", |b| b.iter(|| RobTargetMsg::decode(black_box(&rb)).unwrap()));
    g.bench_function("io_decode", |b| b.iter(|| IoSnapshotMsg::decode(black_box(&ib)).unwrap()));
    g.finish();
}

fn digest(c: &mut Criterion) {
    let creds = DigestCredentials::default();
    let verifier = DigestVerifier::new(creds.clone(), 7).with_lifetime(Duration::from_millis(200));
    let uri = JOINTTARGET;

    let mut g = c.benchmark_group("digest");
    g.bench_function("sign", |b| {
        let challenge = verifier.challenge(false);
        b.iter(|| digest_client_sign("GET", uri, black_box(&challenge), &creds, "0a4f113b", 1).unwrap())
    });
    g.bench_function("verify", |b| {
        b.iter_batched(
            || {
                let challenge = verifier.challenge(false);
                digest_client_sign("GET", uri, &challenge, &creds, "0a4f113b", 1).unwrap()
            },
            |header| verifier.verify("GET", uri, Some(&header)).unwrap(),
            BatchSize::NumIterations(64),
        )
    });
    g.finish();
}

criterion_group!(benches, codec, digest);
criterion_main!(benches);

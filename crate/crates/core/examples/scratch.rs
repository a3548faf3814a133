use ternacc::perf::*;
fn main() {
    let hw = HardwareSpec::default();
    for n in PRESET_NAMES {
        let m = ModelSpec::preset(n).unwrap();
        let r = PerfReport::build(&m, &hw, 2048, 64, Toggles::default()).unwrap();
        println!("{}", r.to_json());
    }
    println!("{:?}", ablate(&ModelSpec::bitnet_3b(), &hw, 2048, 32));
}

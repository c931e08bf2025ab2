use peoplecount_core::frame::quantize_pixel;
use peoplecount_core::pipeline::{PreprocessConfig, Preprocessor};
use peoplecount_core::synth::{FurnitureEvent, Scene, SceneConfig};

#[test]
fn moved_furniture_joins_the_background_after_the_gate() {
    let color = [200, 30, 30];
    let scene = Scene::new(SceneConfig {
        width: 40,
        height: 30,
        frames: 60,
        actors: 0,
        furniture: vec![FurnitureEvent {
            frame: 20,
            x: 5,
            y: 5,
            width: 10,
            height: 8,
            color,
        }],
        ..SceneConfig::default()
    })
    .unwrap();
    // Every frame is a background sample: eta 10, gate ceil(0.8 * 10) = 8.
    let mut pre = Preprocessor::new(PreprocessConfig {
        width: 40,
        height: 30,
        eta: 10,
        bg_interval_ms: 50,
        ..PreprocessConfig::default()
    })
    .unwrap();
    let code = quantize_pixel(color, 4);
    let mut switched = None;
    for (t, (frame, _)) in scene.frames().enumerate() {
        let out = pre.process(&frame).unwrap();
        assert!(out.sampled);
        let bg = pre.background().background().cloned();
        if t < 9 {
            assert!(bg.is_none());
            continue;
        }
        let bg = bg.unwrap();
        let inside = (5..15).all(|x| (5..13).all(|y| bg.code(x, y) == code));
        if inside && switched.is_none() {
            switched = Some(t);
        }
        if t >= 20 && switched.is_none() {
            assert!(out.rgbp.unwrap().p.count_ones() >= 80);
        }
    }
    assert_eq!(switched, Some(20 + 8 - 1));
}

use std::fs;

use turbine_fit::hmp::{frame_dir, read_frame};
use turbine_fit::scene_io::{load_scene, save_scene, simulate, FRAMES_DIR, SCENE_FILE};
use turbine_fit::simeval::{NoiseSpec, Scene, SceneConfig};
use turbine_fit::{Channel, Error};

fn saved_scene() -> tempfile::TempDir {
    let cfg = SceneConfig {
        frame_count: 3,
        ..Default::default()
    };
    let scene = Scene::generate(&cfg, 9).unwrap();
    let (file, maps) = simulate(&scene, &NoiseSpec { seed: 9, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(dir.path(), &file, &maps).unwrap();
    dir
}

#[test]
fn layout_and_reload() {
    let dir = saved_scene();
    assert!(dir.path().join(SCENE_FILE).is_file());
    let frames = dir.path().join(FRAMES_DIR);
    for i in 0..3 {
        let n = fs::read_dir(frame_dir(&frames, i)).unwrap().count();
        assert_eq!(n, 7);
    }
    let (file, maps) = load_scene(dir.path()).unwrap();
    assert_eq!(file.frame_count, 3);
    assert_eq!(maps.len(), 3);
    // renders are stored exactly
    let scene = Scene::generate(&SceneConfig { frame_count: 3, ..Default::default() }, 9).unwrap();
    assert_eq!(scene.render().unwrap(), maps);
}

#[test]
fn missing_channel_is_named() {
    let dir = saved_scene();
    let frames = dir.path().join(FRAMES_DIR);
    let victim = frame_dir(&frames, 1).join(format!("{}.hmp", Channel::ALL[4].file_stem()));
    fs::remove_file(&victim).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    match &err {
        Error::MissingChannel { frame, channel, .. } => {
            assert_eq!(*frame, 1);
            assert_eq!(*channel, Channel::ALL[4].file_stem());
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains(Channel::ALL[4].file_stem()));
}

#[test]
fn malformed_header_reports_file_and_offset() {
    let dir = saved_scene();
    let frames = dir.path().join(FRAMES_DIR);
    let victim = frame_dir(&frames, 0).join(format!("{}.hmp", Channel::ALL[0].file_stem()));
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] = b'X';
    fs::write(&victim, &bytes).unwrap();
    let err = read_frame(&frames, 0).unwrap_err();
    match &err {
        Error::Format { path, offset, .. } => {
            assert_eq!(path, &victim);
            assert_eq!(*offset, 0);
        }
        other => panic!("unexpected error {other}"),
    }
    let msg = load_scene(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("byte 0") && msg.contains(victim.to_str().unwrap()), "{msg}");

    // truncated payload
    bytes[0] = b'H';
    fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_frame(&frames, 0), Err(Error::Format { offset, .. }) if offset == (bytes.len() - 3) as u64));
}

#[test]
fn unreadable_scene_json() {
    let dir = saved_scene();
    fs::write(dir.path().join(SCENE_FILE), b"{ not json").unwrap();
    assert!(matches!(load_scene(dir.path()), Err(Error::Json { .. })));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_scene(empty.path()), Err(Error::Io { .. })));
}

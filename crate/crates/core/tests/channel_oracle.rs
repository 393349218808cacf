mod support;

#[test]
fn traced_paths_match_mirror_images_and_labels_match_brute_force() {
    println!("{}", support::channel::verify());
}

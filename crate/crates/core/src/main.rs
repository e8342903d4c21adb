fn main() {
    std::process::exit(studyformer::cli::main());
}

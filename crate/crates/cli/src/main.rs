fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    std::process::exit(lrlstm_cli::dispatch(std::env::args_os().skip(1)));
}

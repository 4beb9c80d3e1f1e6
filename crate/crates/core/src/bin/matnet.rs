use env_logger::Env;

fn main() {
    let _ = env_logger::Builder::from_env(Env::default().filter_or("MATNET_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    std::process::exit(matnet::cli::run(std::env::args_os()));
}

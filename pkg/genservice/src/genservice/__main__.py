import argparse
import logging

from .app import create_app
from .config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(prog="genservice")
    parser.add_argument("--model", default="context-ngram",
                        help="backend model id; default is the built-in statistical model")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--port", type=int, default=8091)
    parser.add_argument("--max-concurrent", type=int, default=8)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)

    import uvicorn

    config = ServiceConfig(
        model=args.model, device=args.device,
        max_concurrent=args.max_concurrent, port=args.port,
    )
    uvicorn.run(create_app(config), host="0.0.0.0", port=config.port)


if __name__ == "__main__":
    main()

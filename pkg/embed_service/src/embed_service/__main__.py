"""Run the service: ``embed-service [--port N] [--max-batch N] ...``"""

from __future__ import annotations

import argparse

from embed_service.app import create_app
from embed_service.config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(prog="embed-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--max-batch", type=int, default=64)
    parser.add_argument("--dense-dims", type=int, default=256)
    parser.add_argument("--fused-dims", type=int, default=64)
    parser.add_argument("--model", default="deterministic",
                        help="Model identifier for all roles.")
    args = parser.parse_args()
    config = ServiceConfig(
        dense_model=args.model, fused_model=args.model,
        scorer_model=args.model, generator_model=args.model,
        max_batch=args.max_batch, port=args.port,
        dense_dims=args.dense_dims, fused_dims=args.fused_dims,
    )
    import uvicorn

    uvicorn.run(create_app(config), host=args.host, port=args.port)


if __name__ == "__main__":
    main()

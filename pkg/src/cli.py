import argparse
import json
import sys
from typing import List, Optional

from .harness import ARMS, REPRODUCE_TARGETS, SUBCOMMANDS, run_experiment
from .validators import parse_config
from .exceptions import InvalidConfigError, MesaError, ValidationError
from .logger_config import setup_logger, LOG_FILE

logger = setup_logger(__name__, LOG_FILE)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG_ERROR = 2


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog='mesa', description="MESA 元探索多智能体实验工作台")
    parser.add_argument('subcommand', choices=SUBCOMMANDS)
    parser.add_argument('--config', required=True, help="JSON 实验配置文件")
    parser.add_argument('--seed', type=int, default=None, help="只运行这一个种子")
    parser.add_argument('--out', default=None, help="输出根目录，默认取配置中的 OUTPUT_DIR")
    parser.add_argument('--target', choices=sorted(REPRODUCE_TARGETS), default=None,
                        help="reproduce 的复现目标")
    parser.add_argument('--arms', nargs='+', choices=ARMS, default=None,
                        help="覆盖默认的对比臂")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    try:
        config = parse_config(args.config)
    except ValidationError as e:
        logger.error(f"配置无效: {e}")
        return EXIT_CONFIG_ERROR

    try:
        result = run_experiment(config, args.subcommand, out_dir=args.out, seed=args.seed,
                                target=args.target, arms=args.arms)
    except (InvalidConfigError, ValidationError) as e:
        logger.error(f"配置与任务族不兼容: {e}")
        return EXIT_CONFIG_ERROR
    except MesaError as e:
        logger.error(f"{args.subcommand} 失败: {e}", exc_info=True)
        return EXIT_ERROR

    print(json.dumps(result, ensure_ascii=False, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

import json
import os
from datetime import datetime
from typing import List, Optional

from .harness import run_experiment
from .validators import validate_run_config
from .exceptions import MesaError
from .logger_config import setup_logger, LOG_FILE

logger = setup_logger(__name__, LOG_FILE)

RESULTS_DIR = os.getenv('MESA_RESULTS_DIR', 'results')


def run_experiment_json(config_json: str,
                        subcommand: str,
                        seed: Optional[int] = None,
                        target: Optional[str] = None,
                        arms: Optional[List[str]] = None,
                        out_dir: Optional[str] = None) -> str:
    """
    供服务端调用的实验接口

    Args:
        config_json: 实验配置的JSON字符串
        subcommand: theory / meta-train / meta-test / reproduce / ablate
        seed: 可选，只跑一个种子
        target: reproduce 的复现目标
        arms: 可选的对比臂
        out_dir: 输出根目录，默认 MESA_RESULTS_DIR

    Returns:
        结果的JSON字符串
    """
    logger.info(f"开始运行实验: {subcommand}")
    logger.debug(f"输入参数: config_json长度={len(config_json)}, seed={seed}, target={target}, arms={arms}")

    try:
        config = validate_run_config(json.loads(config_json))
        result = run_experiment(config, subcommand, out_dir=out_dir or RESULTS_DIR,
                                seed=seed, target=target, arms=arms)

        payload = json.dumps({
            'status': 'success',
            'data': result
        })
        save_run_result(payload, subcommand, out_dir or RESULTS_DIR)
        return payload

    except json.JSONDecodeError as e:
        logger.error(f"配置JSON解析失败: {str(e)}")
        return json.dumps({
            'status': 'error',
            'error_type': 'ValidationError',
            'message': f"JSON解析错误: {str(e)}"
        })
    except MesaError as e:
        logger.error(f"实验运行错误: {str(e)}", exc_info=True)
        return json.dumps({
            'status': 'error',
            'error_type': e.__class__.__name__,
            'message': str(e)
        })
    except Exception as e:
        logger.error(f"未预期的错误: {str(e)}", exc_info=True)
        return json.dumps({
            'status': 'error',
            'error_type': 'UnexpectedError',
            'message': '系统内部错误'
        })


def save_run_result(result: str, subcommand: str, result_dir: str = None) -> str:
    """保存运行结果到文件"""
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    filename = f"run_{subcommand}_{timestamp}.json"
    result_dir = result_dir or RESULTS_DIR

    # 确保目录存在
    os.makedirs(result_dir, exist_ok=True)

    filepath = os.path.join(result_dir, filename)
    with open(filepath, 'w', encoding='utf-8') as f:
        f.write(result)

    return filename


def list_run_results(result_dir: str = None):
    """列出所有运行结果文件，按文件修改时间排序"""
    result_dir = result_dir or RESULTS_DIR
    results = []
    if not os.path.isdir(result_dir):
        return results

    filenames = [f for f in os.listdir(result_dir)
                 if f.startswith('run_') and f.endswith('.json')]

    for filename in filenames:
        filepath = os.path.join(result_dir, filename)
        try:
            file_timestamp = datetime.fromtimestamp(os.path.getmtime(filepath))
            with open(filepath, 'r', encoding='utf-8') as f:
                data = json.load(f)
                logger.debug(f"文件: {filename}, 修改时间: {file_timestamp}")
                results.append({
                    'filename': filename,
                    'data': data,
                    'timestamp': file_timestamp
                })
        except (json.JSONDecodeError, IOError) as e:
            logger.error(f"处理文件 {filename} 时出错: {str(e)}")
            continue

    # 按文件修改时间排序
    results.sort(key=lambda x: x['timestamp'], reverse=True)

    # 移除timestamp字段
    for result in results:
        del result['timestamp']

    return results

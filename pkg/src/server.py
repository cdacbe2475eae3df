from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware import Middleware

from pydantic import BaseModel
from .api import RESULTS_DIR, list_run_results, run_experiment_json
from .harness import SUBCOMMANDS
from .artifacts import SUMMARY_JSON
import json
import os
from typing import List, Optional
import aiofiles
import uvicorn
from .logger_config import setup_logger, LOG_FILE

# 配置日志
logger = setup_logger(__name__, LOG_FILE)

app = FastAPI(middleware=[
    Middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["POST", "GET", "OPTIONS"],
        allow_headers=["Content-Type", "Accept", "Authorization"],
    )
])


@app.get("/api/results")
async def get_results():
    return list_run_results(RESULTS_DIR)


@app.get("/api/result/{run}/summary")
async def get_run_summary(run: str):
    filepath = os.path.join(RESULTS_DIR, run, SUMMARY_JSON)
    if os.path.basename(run) != run or not os.path.exists(filepath):
        raise HTTPException(status_code=404, detail="Result not found")

    async with aiofiles.open(filepath, 'r', encoding='utf-8') as f:
        return json.loads(await f.read())


class ExperimentRequest(BaseModel):
    config_json: str
    seed: Optional[int] = None
    target: Optional[str] = None
    arms: Optional[List[str]] = None


@app.post("/experiments/{subcommand}")
def handle_experiment_request(subcommand: str, request: ExperimentRequest):
    if subcommand not in SUBCOMMANDS:
        raise HTTPException(status_code=404, detail=f"Unknown subcommand: {subcommand}")
    try:
        logger.debug(f"接收到请求数据: subcommand={subcommand}, config_json长度={len(request.config_json)}")

        result = json.loads(run_experiment_json(
            request.config_json,
            subcommand,
            out_dir=RESULTS_DIR,
            seed=request.seed,
            target=request.target,
            arms=request.arms,
        ))
        if result['status'] == 'error':
            raise HTTPException(status_code=400, detail=result)

        return {
            "status": "success",
            "data": result
        }

    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"处理请求时发生错误: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=400,
            detail=str(e)
        )


@app.get("/health")
async def health_check():
    return {"status": "ok"}


if __name__ == "__main__":
    uvicorn.run(
        "src.server:app",
        host="0.0.0.0",
        port=8080,
        log_level="debug",
        reload=True
    )

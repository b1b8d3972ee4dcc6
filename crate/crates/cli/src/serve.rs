//! HTTP front end for [`conceptscope::service::Service`].

use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, Request, Response, StatusCode};
use axum::Router;
use conceptscope::export::LoadedBundle;
use conceptscope::service::{Service, CORS_HEADERS};

pub fn run(loaded: LoadedBundle, host: &str, port: u16) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        let app = router(Arc::new(Service::new(loaded)));
        axum::serve(listener, app).await
    })
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(handle).with_state(service)
}

async fn handle(State(service): State<Arc<Service>>, request: Request<Body>) -> Response<Body> {
    let mut builder = Response::builder();
    for (name, value) in CORS_HEADERS {
        builder = builder.header(name, value);
    }
    match *request.method() {
        Method::GET | Method::HEAD => {}
        Method::OPTIONS => {
            return builder
                .status(StatusCode::NO_CONTENT)
                .header("access-control-allow-headers", "*")
                .body(Body::empty())
                .expect("valid response");
        }
        _ => {
            return builder
                .status(StatusCode::METHOD_NOT_ALLOWED)
                .header(header::ALLOW, "GET, HEAD, OPTIONS")
                .body(Body::empty())
                .expect("valid response");
        }
    }
    let uri = request.uri();
    let reply = service.handle(uri.path(), uri.query().unwrap_or(""));
    builder
        .status(reply.status)
        .header(header::CONTENT_TYPE, reply.content_type)
        .body(Body::from(reply.body))
        .expect("valid response")
}
